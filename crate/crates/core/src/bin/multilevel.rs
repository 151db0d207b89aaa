fn main() {
    std::process::exit(multilevel::cli::main_with_args(std::env::args_os()));
}
