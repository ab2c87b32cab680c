fn main() {
    std::process::exit(spanmax_cli::main_with_args(std::env::args_os()));
}
