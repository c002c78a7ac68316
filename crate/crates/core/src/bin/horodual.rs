fn main() {
    std::process::exit(horodual::cli::main_with_args(std::env::args_os()));
}
