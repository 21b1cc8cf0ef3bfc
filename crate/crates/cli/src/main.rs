fn main() {
    std::process::exit(infoevo_cli::main_with_args(std::env::args_os()));
}
