fn main() {
    std::process::exit(thar::cli::run_cli(std::env::args_os()));
}
