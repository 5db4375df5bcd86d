fn main() {
    std::process::exit(spcor::cli::main_with(std::env::args_os()));
}
