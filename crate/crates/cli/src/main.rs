fn main() {
    std::process::exit(epir_cli::run(std::env::args_os()));
}
