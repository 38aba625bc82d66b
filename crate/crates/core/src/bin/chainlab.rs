fn main() {
    std::process::exit(chainlab::cli::main_with_args(std::env::args_os()));
}
