fn main() {
    std::process::exit(absa_cli::run(std::env::args_os()));
}
