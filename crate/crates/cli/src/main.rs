fn main() {
    std::process::exit(acat_cli::run_cli(std::env::args_os()));
}
