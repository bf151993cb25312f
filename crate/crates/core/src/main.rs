fn main() {
    std::process::exit(psep::cli::main_with_args(std::env::args_os()));
}
