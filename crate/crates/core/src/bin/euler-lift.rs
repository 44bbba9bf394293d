fn main() {
    std::process::exit(euler_lift::cli::run_cli(std::env::args_os()));
}
