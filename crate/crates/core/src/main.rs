fn main() {
    std::process::exit(signal_dojo::cli::main_with_args(std::env::args_os()));
}
