fn main() {
    std::process::exit(spartan_bo::cli::main_with_args(std::env::args_os()));
}
