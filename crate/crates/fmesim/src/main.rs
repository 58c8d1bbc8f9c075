fn main() {
    std::process::exit(fmesim::cli::main_with_args(std::env::args_os()));
}
