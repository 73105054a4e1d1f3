fn main() {
    std::process::exit(csl::harness::cli::run_cli(std::env::args_os()));
}
