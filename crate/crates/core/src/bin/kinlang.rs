fn main() {
    std::process::exit(kinlang::harness::cli::run_cli(std::env::args_os()));
}
