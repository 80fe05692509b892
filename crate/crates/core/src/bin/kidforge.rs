fn main() {
    std::process::exit(kidforge::cli::main_with_args(std::env::args_os()));
}
