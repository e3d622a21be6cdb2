fn main() {
    std::process::exit(aac_core::harness::cli::run_cli(std::env::args_os()));
}
