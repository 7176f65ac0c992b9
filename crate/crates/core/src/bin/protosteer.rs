fn main() {
    std::process::exit(protosteer::cli::main_with(std::env::args_os()));
}
