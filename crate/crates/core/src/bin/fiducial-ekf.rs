fn main() {
    std::process::exit(fiducial_ekf::cli::main_with_args(std::env::args_os()));
}
