fn main() {
    std::process::exit(regtrack::cli::main_with(std::env::args_os()));
}
