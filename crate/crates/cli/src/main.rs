fn main() {
    std::process::exit(confscale_cli::run(std::env::args_os()));
}
