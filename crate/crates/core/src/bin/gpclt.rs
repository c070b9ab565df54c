fn main() {
    std::process::exit(gpclt::cli::run_cli(std::env::args_os()));
}
