fn main() {
    std::process::exit(raresir_cli::run(std::env::args_os()));
}
