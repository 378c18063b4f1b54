fn main() {
    std::process::exit(tubefit::run());
}
