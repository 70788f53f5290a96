fn main() {
    std::process::exit(mtlspk_cli::main_with_args(std::env::args_os()));
}
