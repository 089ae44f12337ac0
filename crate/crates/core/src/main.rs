fn main() {
    std::process::exit(lada::cli::main_with_args(std::env::args_os()));
}
