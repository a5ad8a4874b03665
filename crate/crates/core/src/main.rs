fn main() {
    std::process::exit(planar_impact::cli::run(std::env::args_os()));
}
