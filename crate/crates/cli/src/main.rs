fn main() {
    std::process::exit(pdra_cli::main_with_args(std::env::args_os()));
}
