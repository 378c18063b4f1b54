//! File formats: CSV point clouds, plain-text voxel grids, the versioned
//! JSON tube file, OBJ surface meshes, and CSV report tables.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud};
use crate::profile::Profile;
use crate::sim::TPFPCurve;
use crate::tube::{section_area, LatticeGrid, SectionSlot, SurfaceMesh, Tube};

/// Current tube file format version.
pub const TUBE_FORMAT_VERSION: u32 = 1;

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Read a point cloud from CSV: rows `x,y,z` or `x,y,z,intensity`, one
/// point per row. Blank lines and `#` comments are skipped. The column
/// count must be consistent across rows.
pub fn read_point_cloud_csv(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path)?;
    let mut points = Vec::new();
    let mut intensities: Vec<f64> = Vec::new();
    let mut ncols: Option<usize> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 3 or 4 columns, found {}", fields.len()),
            ));
        }
        match ncols {
            None => ncols = Some(fields.len()),
            Some(n) if n != fields.len() => {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("inconsistent column count: {} after {n}", fields.len()),
                ));
            }
            _ => {}
        }
        let mut vals = [0.0f64; 4];
        for (k, f) in fields.iter().enumerate() {
            vals[k] = f
                .parse()
                .map_err(|e| parse_err(path, line_no, format!("bad number {f:?}: {e}")))?;
        }
        points.push(Point3::new(vals[0], vals[1], vals[2]));
        if fields.len() == 4 {
            intensities.push(vals[3]);
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{} contains no data rows",
            path.display()
        )));
    }
    let ints = (!intensities.is_empty()).then_some(intensities);
    PointCloud::new(points, ints)
}

/// Write a point cloud as CSV, with the intensity column when present.
/// A nonempty provenance string becomes a leading comment line.
pub fn write_point_cloud_csv(cloud: &PointCloud, provenance: &str, path: &Path) -> Result<()> {
    let mut out = String::new();
    if !provenance.is_empty() {
        writeln!(out, "# {provenance}").unwrap();
    }
    for (i, p) in cloud.points().iter().enumerate() {
        match cloud.intensities() {
            Some(w) => writeln!(out, "{},{},{},{}", p.x, p.y, p.z, w[i]),
            None => writeln!(out, "{},{},{}", p.x, p.y, p.z),
        }
        .expect("string write cannot fail");
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a plain-text voxel grid: header lines `dims nx ny nz`,
/// `pitch px py pz`, `origin ox oy oz`, then nx*ny*nz whitespace-separated
/// values in row-major order (x fastest, then y, then z).
pub fn read_voxel_grid(path: &Path) -> Result<(LatticeGrid, Vec<f64>)> {
    let text = fs::read_to_string(path)?;
    let mut dims: Option<[usize; 3]> = None;
    let mut pitch: Option<[f64; 3]> = None;
    let mut origin: Option<Point3> = None;
    let mut values = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let first = tokens.next().unwrap();
        match first {
            "dims" | "pitch" | "origin" => {
                let rest: Vec<&str> = tokens.collect();
                if rest.len() != 3 {
                    return Err(parse_err(
                        path,
                        line_no,
                        format!("{first} expects 3 values, found {}", rest.len()),
                    ));
                }
                let nums: Vec<f64> = rest
                    .iter()
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|e| parse_err(path, line_no, format!("bad number {t:?}: {e}")))
                    })
                    .collect::<Result<_>>()?;
                match first {
                    "dims" => {
                        if nums.iter().any(|&n| n < 1.0 || n.fract() != 0.0) {
                            return Err(parse_err(path, line_no, "dims must be positive integers"));
                        }
                        dims = Some([nums[0] as usize, nums[1] as usize, nums[2] as usize]);
                    }
                    "pitch" => {
                        if nums.iter().any(|&n| n <= 0.0) {
                            return Err(parse_err(path, line_no, "pitch must be positive"));
                        }
                        pitch = Some([nums[0], nums[1], nums[2]]);
                    }
                    _ => origin = Some(Point3::new(nums[0], nums[1], nums[2])),
                }
            }
            _ => {
                for t in line.split_whitespace() {
                    values.push(t.parse::<f64>().map_err(|e| {
                        parse_err(path, line_no, format!("bad value {t:?}: {e}"))
                    })?);
                }
            }
        }
    }
    let dims = dims.ok_or_else(|| parse_err(path, 0, "missing dims header"))?;
    let pitch = pitch.ok_or_else(|| parse_err(path, 0, "missing pitch header"))?;
    let origin = origin.ok_or_else(|| parse_err(path, 0, "missing origin header"))?;
    let expected = dims[0] * dims[1] * dims[2];
    if values.len() != expected {
        return Err(parse_err(
            path,
            0,
            format!("expected {expected} values, found {}", values.len()),
        ));
    }
    Ok((LatticeGrid { origin, pitch, dims }, values))
}

/// Write a voxel grid in the plain-text format read by `read_voxel_grid`.
pub fn write_voxel_grid(
    lattice: &LatticeGrid,
    values: &[f64],
    provenance: &str,
    path: &Path,
) -> Result<()> {
    if values.len() != lattice.len() {
        return Err(Error::Export(format!(
            "{} values for a {}x{}x{} grid",
            values.len(),
            lattice.dims[0],
            lattice.dims[1],
            lattice.dims[2]
        )));
    }
    let mut out = String::new();
    if !provenance.is_empty() {
        writeln!(out, "# {provenance}").unwrap();
    }
    writeln!(
        out,
        "dims {} {} {}",
        lattice.dims[0], lattice.dims[1], lattice.dims[2]
    )
    .unwrap();
    writeln!(
        out,
        "pitch {} {} {}",
        lattice.pitch[0], lattice.pitch[1], lattice.pitch[2]
    )
    .unwrap();
    writeln!(
        out,
        "origin {} {} {}",
        lattice.origin.x, lattice.origin.y, lattice.origin.z
    )
    .unwrap();
    let per_row = lattice.dims[0];
    for row in values.chunks(per_row) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

/// Convert a voxel grid into a point cloud of voxel centers whose value
/// exceeds the threshold, keeping values as intensities.
pub fn voxel_grid_to_cloud(
    lattice: &LatticeGrid,
    values: &[f64],
    threshold: f64,
) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut ints = Vec::new();
    for (k, idx) in lattice.indices().enumerate() {
        if values[k] > threshold {
            points.push(lattice.center(idx));
            ints.push(values[k]);
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no voxels above threshold {threshold}"
        )));
    }
    PointCloud::new(points, Some(ints))
}

#[derive(Serialize, Deserialize)]
struct TubeFileEnvelope {
    version: u32,
    tube: Tube,
}

/// Write the tube to a versioned JSON file.
pub fn write_tube(tube: &Tube, path: &Path) -> Result<()> {
    let envelope = TubeFileEnvelope {
        version: TUBE_FORMAT_VERSION,
        tube: tube.clone(),
    };
    let json = serde_json::to_string_pretty(&envelope)?;
    fs::write(path, json)?;
    Ok(())
}

/// Read a tube file, checking the format version and rebuilding the
/// centerline sample cache.
pub fn read_tube(path: &Path) -> Result<Tube> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| parse_err(path, 0, "missing format version"))?;
    if version != TUBE_FORMAT_VERSION as u64 {
        return Err(Error::UnsupportedVersion {
            found: version as u32,
            supported: TUBE_FORMAT_VERSION,
        });
    }
    let envelope: TubeFileEnvelope = serde_json::from_value(value)?;
    let mut tube = envelope.tube;
    tube.rebuild_samples()?;
    Ok(tube)
}

/// Write a surface mesh as OBJ-style text: `v x y z [scalar]` vertex lines
/// and 1-based `f` quad lines.
pub fn write_surface_obj(mesh: &SurfaceMesh, provenance: &str, path: &Path) -> Result<()> {
    let mut out = String::new();
    if !provenance.is_empty() {
        writeln!(out, "# {provenance}").unwrap();
    }
    for (i, v) in mesh.vertices.iter().enumerate() {
        match &mesh.scalars {
            Some(s) => writeln!(out, "v {} {} {} {}", v.x, v.y, v.z, s[i]),
            None => writeln!(out, "v {} {} {}", v.x, v.y, v.z),
        }
        .unwrap();
    }
    for q in &mesh.quads {
        writeln!(out, "f {} {} {} {}", q[0] + 1, q[1] + 1, q[2] + 1, q[3] + 1).unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

/// Write the per-section table: t0, arc-length distance, semi-axes, area,
/// gap flag. Gap rows leave the geometry columns empty.
pub fn write_section_table(tube: &Tube, provenance: &str, path: &Path) -> Result<()> {
    let mut out = String::new();
    if !provenance.is_empty() {
        writeln!(out, "# {provenance}").unwrap();
    }
    out.push_str("t0,distance,semi_major,semi_minor,area,gap\n");
    for slot in &tube.sections {
        let t0 = slot.t0();
        let d = crate::profile::arc_length(&tube.curve, t0, tube.config.grid_resolution)?;
        match slot {
            SectionSlot::Fitted(cs) => writeln!(
                out,
                "{},{},{},{},{},false",
                t0,
                d,
                cs.ellipse.semi_major,
                cs.ellipse.semi_minor,
                section_area(cs)
            )
            .unwrap(),
            SectionSlot::Gap { .. } => writeln!(out, "{t0},{d},,,,true").unwrap(),
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Write a profile as CSV with a provenance header comment.
pub fn write_profile_csv(profile: &Profile, provenance: &str, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "# {provenance}").unwrap();
    writeln!(out, "t0,distance,value").unwrap();
    for i in 0..profile.t0s.len() {
        match profile.values[i] {
            Some(v) => writeln!(out, "{},{},{}", profile.t0s[i], profile.distances[i], v),
            None => writeln!(out, "{},{},", profile.t0s[i], profile.distances[i]),
        }
        .unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

/// Write a TP/FP-vs-alpha table with a provenance header comment.
pub fn write_tpfp_csv(curve: &TPFPCurve, provenance: &str, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "# {provenance}").unwrap();
    writeln!(out, "alpha,tp_mean,tp_se,fp_mean,fp_se").unwrap();
    for i in 0..curve.alpha_grid.len() {
        writeln!(
            out,
            "{},{},{},{},{}",
            curve.alpha_grid[i], curve.tp_mean[i], curve.tp_se[i], curve.fp_mean[i], curve.fp_se[i]
        )
        .unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}
