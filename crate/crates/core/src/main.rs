fn main() {
    std::process::exit(clse::cli::main_with_args(std::env::args_os()));
}
