fn main() {
    std::process::exit(flexem_cli::run(std::env::args_os()));
}
