fn main() {
    let env_dir = std::env::var_os("CHOREO_OUT_DIR").map(std::path::PathBuf::from);
    std::process::exit(choreo::cli::run(std::env::args_os(), env_dir));
}
