fn main() {
    std::process::exit(homlab_cli::main_with_args(std::env::args_os()));
}
