fn main() {
    std::process::exit(danet::cli::main_with_args(std::env::args_os()));
}
