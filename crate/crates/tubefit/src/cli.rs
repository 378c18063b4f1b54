//! Command-line interface: argument parsing, subcommand dispatch, and the
//! exit-code contract.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::curve::{fit_principal_curve, CurveFit, CurveFitConfig, PrincipalCurve};
use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud};
use crate::io;
use crate::profile::{self, Axis, ProfileKind};
use crate::sim::{
    generate_coil_phantom, run_alpha_sim, run_phantom_validation, run_shape_sim, AlphaSimConfig,
    PhantomConfig, PhantomNoise, ShapeKind, TubeRadius,
};
use crate::tube::{classify_against_truth, export_surface, fit_tube, Tube, TubeConfig};

const EXIT_OK: i32 = 0;
const EXIT_USAGE: i32 = 2;
const EXIT_INPUT: i32 = 3;
const EXIT_NUMERIC: i32 = 4;
const EXIT_IO: i32 = 5;

const EXIT_CODE_HELP: &str = "EXIT CODES:
  0  success
  2  usage or configuration error
  3  input or parse error (malformed files, empty inputs, version mismatch)
  4  numeric or fitting failure (degenerate data, tube fit failure)
  5  output error (cannot write results)";

#[derive(Parser)]
#[command(
    name = "tubefit",
    about = "Centerline and tube estimation from 3D point clouds",
    after_long_help = EXIT_CODE_HELP,
    version
)]
struct Cli {
    /// Cap the worker thread count (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the principal curve and report per-stage convergence.
    FitCurve(FitCurveArgs),
    /// Fit the full tube: curve, cross sections, surface mesh.
    FitTube(FitTubeArgs),
    /// Compute an along-tube profile from a fitted tube and a cloud.
    Profile(ProfileArgs),
    /// Classify a fitted tube against a ground-truth voxel grid.
    Validate(ValidateArgs),
    /// Run the alpha calibration Monte Carlo.
    SimulateAlpha(SimulateAlphaArgs),
    /// Run the cross-section shape misspecification study.
    SimulateShape(SimulateShapeArgs),
    /// Generate the coil phantom, optionally validating against it.
    Phantom(PhantomArgs),
}

#[derive(Args, Clone)]
struct InputArgs {
    /// Input point data.
    #[arg(long)]
    input: PathBuf,
    /// Input format.
    #[arg(long, value_enum, default_value_t = InputFormat::Csv)]
    format: InputFormat,
    /// Intensity threshold for voxel-grid input; voxels with values above
    /// it become points.
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq)]
enum InputFormat {
    Csv,
    VoxelGrid,
}

#[derive(Args, Clone)]
struct CurveArgs {
    /// Curve start endpoint as x,y,z.
    #[arg(long, value_parser = parse_point)]
    start: Point3,
    /// Curve end endpoint as x,y,z.
    #[arg(long, value_parser = parse_point)]
    end: Point3,
    /// Final spline degrees of freedom K.
    #[arg(long, default_value_t = 5)]
    df: usize,
    /// Explicit degrees-of-freedom schedule, e.g. 4,5,6. Must end at K.
    #[arg(long, value_delimiter = ',')]
    schedule: Option<Vec<usize>>,
    /// Latent-time assignment grid resolution.
    #[arg(long, default_value_t = 1000)]
    grid_resolution: usize,
    /// Intensity weight exponent gamma (default: 1 when intensities are
    /// present, 0 otherwise).
    #[arg(long)]
    gamma: Option<f64>,
    /// Relative MSE change that stops a stage.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Fit on a uniform subsample of this many points.
    #[arg(long)]
    subsample: Option<usize>,
    /// Master random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl CurveArgs {
    fn to_config(&self) -> CurveFitConfig {
        let mut cfg = CurveFitConfig::new(self.start, self.end, self.df);
        cfg.df_schedule = self.schedule.clone();
        cfg.grid_resolution = self.grid_resolution;
        cfg.intensity_exponent = self.gamma;
        cfg.rel_mse_tol = self.tol;
        cfg.subsample = self.subsample;
        cfg.seed = self.seed;
        cfg
    }
}

#[derive(Args)]
struct FitCurveArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    curve: CurveArgs,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq)]
enum Preset {
    /// Colon concentration imaging: t_r = 0.2, alpha = 0.15, K = 5.
    SpectColon,
    /// Corticospinal tract profiling: t_r = 0.4, alpha = 0.1, K = 8.
    DtiCst,
}

#[derive(Args)]
struct FitTubeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    curve: CurveArgs,
    /// Latent-time window radius t_r.
    #[arg(long, default_value_t = 0.2)]
    t_r: f64,
    /// Level-set alpha.
    #[arg(long, default_value_t = 0.15)]
    alpha: f64,
    /// Number of cross sections.
    #[arg(long, default_value_t = 50)]
    n_sections: usize,
    /// Published parameter preset; overrides t_r, alpha and df.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Boundary points per surface ring.
    #[arg(long, default_value_t = 64)]
    boundary_points: usize,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq)]
enum ProfileKindArg {
    Sum,
    AreaNormalized,
    WeightedMean,
    VoxelNeighborhood,
    Slice,
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq)]
enum AxisArg {
    X,
    Y,
    Z,
}

#[derive(Args)]
struct ProfileArgs {
    /// Fitted tube file (required for all kinds except slice).
    #[arg(long)]
    tube: Option<PathBuf>,
    #[command(flatten)]
    input: InputArgs,
    /// Profile kind.
    #[arg(long, value_enum)]
    kind: ProfileKindArg,
    /// Cube edge length for the voxel-neighborhood baseline.
    #[arg(long, default_value_t = 1.0)]
    edge: f64,
    /// Sample count for the voxel-neighborhood baseline.
    #[arg(long, default_value_t = 50)]
    profile_points: usize,
    /// Slab axis for the slice baseline.
    #[arg(long, value_enum, default_value_t = AxisArg::Z)]
    axis: AxisArg,
    /// Slab width for the slice baseline.
    #[arg(long, default_value_t = 1.0)]
    window: f64,
    /// Normalize values to the profile maximum.
    #[arg(long)]
    normalize: bool,
    /// Output CSV path.
    #[arg(long, default_value = "profile.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    /// Fitted tube file.
    #[arg(long)]
    tube: PathBuf,
    /// Ground-truth voxel grid.
    #[arg(long)]
    truth: PathBuf,
    /// Truth threshold: voxels with values above it are truth members.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Alphas to evaluate, e.g. 0.05,0.1,0.2.
    #[arg(long, value_delimiter = ',', required = true)]
    alphas: Vec<f64>,
    /// Output CSV path.
    #[arg(long, default_value = "validation.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateAlphaArgs {
    /// True ellipse semi-major axis A.
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    /// True ellipse semi-minor axis B.
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    /// Isotropic noise standard deviation.
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    /// Alphas to evaluate, e.g. 0.05,0.12,0.3.
    #[arg(long, value_delimiter = ',', required = true)]
    alphas: Vec<f64>,
    /// Points per replicate.
    #[arg(long, default_value_t = 100)]
    n_points: usize,
    /// Replicate count.
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    /// Rasterization resolution for overlap areas.
    #[arg(long, default_value_t = 256)]
    resolution: usize,
    /// Master random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long, default_value = "alpha_sim.csv")]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq)]
enum ShapeArg {
    Square,
    UShape,
    Circle,
}

#[derive(Args)]
struct SimulateShapeArgs {
    /// Cross-section shape.
    #[arg(long, value_enum)]
    shape: ShapeArg,
    /// Level-set alpha.
    #[arg(long, default_value_t = 0.12)]
    alpha: f64,
    /// Master random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long, default_value = "shape_sim.csv")]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq)]
enum NoiseArg {
    None,
    PoissonCounts,
}

#[derive(Args)]
struct PhantomArgs {
    /// Coil (helix) radius.
    #[arg(long, default_value_t = 6.0)]
    coil_radius: f64,
    /// Tube radius.
    #[arg(long, default_value_t = 2.0)]
    tube_radius: f64,
    /// Tube radius at the far end for a linear ramp (default: fixed).
    #[arg(long)]
    tube_radius_end: Option<f64>,
    /// Helix turns.
    #[arg(long, default_value_t = 2.0)]
    turns: f64,
    /// Helix height.
    #[arg(long, default_value_t = 12.0)]
    height: f64,
    /// Voxel pitch.
    #[arg(long, default_value_t = 0.35)]
    pitch: f64,
    /// Intensity noise model.
    #[arg(long, value_enum, default_value_t = NoiseArg::None)]
    noise: NoiseArg,
    /// Mean Poisson count inside the structure.
    #[arg(long, default_value_t = 20.0)]
    signal_mean: f64,
    /// Mean Poisson count outside the structure.
    #[arg(long, default_value_t = 0.01)]
    background_mean: f64,
    /// Sampled cloud size.
    #[arg(long, default_value_t = 1000)]
    sample_size: usize,
    /// Master random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also fit and validate at these alphas, e.g. 0.05,0.1.
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// Curve degrees of freedom for validation fits.
    #[arg(long, default_value_t = 10)]
    df: usize,
    /// Window radius t_r for validation fits.
    #[arg(long, default_value_t = 0.03)]
    t_r: f64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn parse_point(s: &str) -> std::result::Result<Point3, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z, found {s:?}"));
    }
    let mut v = [0.0; 3];
    for (i, p) in parts.iter().enumerate() {
        v[i] = p.parse().map_err(|e| format!("bad coordinate {p:?}: {e}"))?;
    }
    Ok(Point3::new(v[0], v[1], v[2]))
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) | Error::Export(_) => EXIT_IO,
        Error::Parse { .. }
        | Error::Input(_)
        | Error::EmptyInput(_)
        | Error::Json(_)
        | Error::UnsupportedVersion { .. } => EXIT_INPUT,
        Error::Precondition(_) => EXIT_USAGE,
        _ => EXIT_NUMERIC,
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version on stdout with code 0, usage errors
            // with code 2.
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(n) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error code={code} msg={e}");
            code
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::FitCurve(args) => cmd_fit_curve(args),
        Command::FitTube(args) => cmd_fit_tube(args),
        Command::Profile(args) => cmd_profile(args),
        Command::Validate(args) => cmd_validate(args),
        Command::SimulateAlpha(args) => cmd_simulate_alpha(args),
        Command::SimulateShape(args) => cmd_simulate_shape(args),
        Command::Phantom(args) => cmd_phantom(args),
    }
}

fn read_cloud(input: &InputArgs) -> Result<PointCloud> {
    if !input.input.exists() {
        return Err(Error::Input(format!(
            "input file {} does not exist",
            input.input.display()
        )));
    }
    match input.format {
        InputFormat::Csv => io::read_point_cloud_csv(&input.input),
        InputFormat::VoxelGrid => {
            let (lattice, values) = io::read_voxel_grid(&input.input)?;
            io::voxel_grid_to_cloud(&lattice, &values, input.threshold)
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct CurveFileEnvelope {
    version: u32,
    config: CurveFitConfig,
    curve: PrincipalCurve,
}

fn write_curve_outputs(fit: &CurveFit, config: &CurveFitConfig, out_dir: &Path) -> Result<()> {
    let envelope = CurveFileEnvelope {
        version: io::TUBE_FORMAT_VERSION,
        config: config.clone(),
        curve: fit.curve.clone(),
    };
    std::fs::write(
        out_dir.join("curve.json"),
        serde_json::to_string_pretty(&envelope)?,
    )?;
    let mut stages = String::from("stage,df,iteration,mse\n");
    for (si, st) in fit.stages.iter().enumerate() {
        for (it, mse) in st.mse_trace.iter().enumerate() {
            stages.push_str(&format!("{},{},{},{}\n", si, st.df, it, mse));
        }
    }
    std::fs::write(out_dir.join("stages.csv"), stages)?;
    Ok(())
}

fn cmd_fit_curve(args: FitCurveArgs) -> Result<()> {
    let cloud = read_cloud(&args.input)?;
    let config = args.curve.to_config();
    let fit = fit_principal_curve(&cloud, &config)?;
    ensure_dir(&args.out_dir)?;
    write_curve_outputs(&fit, &config, &args.out_dir)?;
    println!(
        "fit-curve: {} stages, final df {}",
        fit.stages.len(),
        fit.curve.final_df
    );
    Ok(())
}

fn cmd_fit_tube(args: FitTubeArgs) -> Result<()> {
    let cloud = read_cloud(&args.input)?;
    let mut curve_args = args.curve.clone();
    let (t_r, alpha) = match args.preset {
        Some(Preset::SpectColon) => {
            curve_args.df = 5;
            curve_args.schedule = None;
            (0.2, 0.15)
        }
        Some(Preset::DtiCst) => {
            curve_args.df = 8;
            curve_args.schedule = None;
            (0.4, 0.1)
        }
        None => (args.t_r, args.alpha),
    };
    let config = curve_args.to_config();
    let fit = fit_principal_curve(&cloud, &config)?;
    let mut tube_config = TubeConfig::new(t_r, alpha);
    tube_config.n_sections = args.n_sections;
    tube_config.grid_resolution = config.grid_resolution;
    tube_config.seed = config.seed;
    let tube = fit_tube(&fit.curve, &cloud, &tube_config)?;

    ensure_dir(&args.out_dir)?;
    write_curve_outputs(&fit, &config, &args.out_dir)?;
    io::write_tube(&tube, &args.out_dir.join("tube.json"))?;
    let provenance = format!(
        "tubefit fit-tube t_r={t_r} alpha={alpha} n_sections={} seed={}",
        args.n_sections, config.seed
    );
    io::write_section_table(&tube, &provenance, &args.out_dir.join("sections.csv"))?;
    let mesh = export_surface(&tube, args.boundary_points, None)?;
    io::write_surface_obj(&mesh, &provenance, &args.out_dir.join("surface.obj"))?;
    let gaps = tube.gaps().count();
    println!(
        "fit-tube: {} sections, {gaps} gaps",
        tube.sections.len()
    );
    Ok(())
}

fn load_tube(path: &Path) -> Result<Tube> {
    if !path.exists() {
        return Err(Error::Input(format!(
            "tube file {} does not exist",
            path.display()
        )));
    }
    io::read_tube(path)
}

fn cmd_profile(args: ProfileArgs) -> Result<()> {
    let cloud = read_cloud(&args.input)?;
    let profile = match args.kind {
        ProfileKindArg::Slice => {
            let axis = match args.axis {
                AxisArg::X => Axis::X,
                AxisArg::Y => Axis::Y,
                AxisArg::Z => Axis::Z,
            };
            profile::slice_profile(&cloud, axis, args.window)?
        }
        kind => {
            let tube_path = args.tube.as_ref().ok_or_else(|| {
                Error::Precondition("--tube is required for this profile kind".into())
            })?;
            let tube = load_tube(tube_path)?;
            match kind {
                ProfileKindArg::Sum => {
                    profile::concentration_profile(&tube, &cloud, ProfileKind::Sum)?
                }
                ProfileKindArg::AreaNormalized => {
                    profile::concentration_profile(&tube, &cloud, ProfileKind::AreaNormalized)?
                }
                ProfileKindArg::WeightedMean => {
                    profile::concentration_profile(&tube, &cloud, ProfileKind::WeightedMean)?
                }
                ProfileKindArg::VoxelNeighborhood => profile::voxel_neighborhood_profile(
                    &tube.curve,
                    &cloud,
                    args.edge,
                    args.profile_points,
                )?,
                ProfileKindArg::Slice => unreachable!(),
            }
        }
    };
    let profile = if args.normalize {
        profile.normalized_to_max()?
    } else {
        profile
    };
    let provenance = format!(
        "tubefit profile kind={:?} normalize={}",
        profile.kind, args.normalize
    );
    io::write_profile_csv(&profile, &provenance, &args.out)?;
    println!("profile: {} rows", profile.t0s.len());
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<()> {
    let tube = load_tube(&args.tube)?;
    if !args.truth.exists() {
        return Err(Error::Input(format!(
            "truth file {} does not exist",
            args.truth.display()
        )));
    }
    let (lattice, values) = io::read_voxel_grid(&args.truth)?;
    let truth: std::collections::HashSet<[usize; 3]> = lattice
        .indices()
        .zip(&values)
        .filter(|(_, &v)| v > args.threshold)
        .map(|(idx, _)| idx)
        .collect();
    if truth.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no truth voxels above threshold {}",
            args.threshold
        )));
    }
    let mut out = format!(
        "# tubefit validate threshold={} alphas={:?}\n",
        args.threshold, args.alphas
    );
    out.push_str("alpha,tp_rate,fp_rate,tp,fp,fn,tn\n");
    for &alpha in &args.alphas {
        let t = tube.with_alpha(alpha)?;
        let r = classify_against_truth(&t, &truth, &lattice)?;
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            alpha,
            r.true_positive_rate,
            r.false_positive_rate,
            r.true_positives,
            r.false_positives,
            r.false_negatives,
            r.true_negatives
        ));
    }
    std::fs::write(&args.out, out)?;
    println!("validate: {} alphas", args.alphas.len());
    Ok(())
}

fn cmd_simulate_alpha(args: SimulateAlphaArgs) -> Result<()> {
    let mut config = AlphaSimConfig::new(args.a, args.b, args.sigma, args.alphas.clone());
    config.n_points = args.n_points;
    config.n_replicates = args.replicates;
    config.resolution = args.resolution;
    config.seed = args.seed;
    let curve = run_alpha_sim(&config)?;
    let provenance = format!(
        "tubefit simulate-alpha A={} B={} sigma={} n_points={} replicates={} seed={}",
        args.a, args.b, args.sigma, args.n_points, args.replicates, args.seed
    );
    io::write_tpfp_csv(&curve, &provenance, &args.out)?;
    println!(
        "simulate-alpha: {} alphas, {} replicates used, {} skipped",
        curve.alpha_grid.len(),
        curve.n_used,
        curve.n_skipped
    );
    Ok(())
}

fn cmd_simulate_shape(args: SimulateShapeArgs) -> Result<()> {
    let shape = match args.shape {
        ShapeArg::Square => ShapeKind::Square,
        ShapeArg::UShape => ShapeKind::UShape,
        ShapeArg::Circle => ShapeKind::Circle,
    };
    let (tp, fp) = run_shape_sim(shape, args.alpha, args.seed)?;
    let out = format!(
        "# tubefit simulate-shape shape={:?} alpha={} seed={}\nshape,alpha,tp,fp\n{:?},{},{},{}\n",
        shape, args.alpha, args.seed, shape, args.alpha, tp, fp
    );
    std::fs::write(&args.out, out)?;
    println!("simulate-shape: tp={tp} fp={fp}");
    Ok(())
}

fn cmd_phantom(args: PhantomArgs) -> Result<()> {
    let config = PhantomConfig {
        coil_radius: args.coil_radius,
        tube_radius: match args.tube_radius_end {
            Some(end) => TubeRadius::Ramp {
                start: args.tube_radius,
                end,
            },
            None => TubeRadius::Fixed(args.tube_radius),
        },
        turns: args.turns,
        height: args.height,
        pitch: args.pitch,
        noise: match args.noise {
            NoiseArg::None => PhantomNoise::None,
            NoiseArg::PoissonCounts => PhantomNoise::PoissonCounts {
                signal_mean: args.signal_mean,
                background_mean: args.background_mean,
            },
        },
        sample_size: args.sample_size,
        seed: args.seed,
    };
    let phantom = generate_coil_phantom(&config)?;
    ensure_dir(&args.out_dir)?;
    let provenance = format!(
        "tubefit phantom coil_radius={} turns={} height={} pitch={} sample_size={} seed={}",
        args.coil_radius, args.turns, args.height, args.pitch, args.sample_size, args.seed
    );
    let values: Vec<f64> = phantom
        .lattice
        .indices()
        .map(|idx| if phantom.truth.contains(&idx) { 1.0 } else { 0.0 })
        .collect();
    io::write_voxel_grid(
        &phantom.lattice,
        &values,
        &provenance,
        &args.out_dir.join("truth.grid"),
    )?;
    io::write_point_cloud_csv(&phantom.cloud, &provenance, &args.out_dir.join("cloud.csv"))?;
    println!(
        "phantom: {} truth voxels, {} cloud points",
        phantom.truth.len(),
        phantom.cloud.len()
    );

    if let Some(alphas) = &args.alphas {
        let rows = run_phantom_validation(&config, args.df, args.t_r, alphas)?;
        let mut out = format!("# {provenance} df={} t_r={}\n", args.df, args.t_r);
        out.push_str("alpha,tp_rate,fp_rate,tp,fp,boundary_fraction\n");
        for row in &rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.alpha,
                row.result.true_positive_rate,
                row.result.false_positive_rate,
                row.result.true_positives,
                row.result.false_positives,
                row.boundary_fraction
            ));
        }
        std::fs::write(args.out_dir.join("validation.csv"), out)?;
        println!("phantom validation: {} alphas", rows.len());
    }
    Ok(())
}
