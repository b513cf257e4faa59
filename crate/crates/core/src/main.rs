fn main() {
    std::process::exit(tscl::cli::main_with_args(std::env::args_os()));
}
