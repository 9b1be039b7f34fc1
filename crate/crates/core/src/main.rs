fn main() {
    std::process::exit(neuroest::cli::run_cli(std::env::args_os()));
}
