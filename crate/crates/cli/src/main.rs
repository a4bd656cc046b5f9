fn main() {
    std::process::exit(reins_cli::main_with_args(std::env::args_os()));
}
