fn main() {
    std::process::exit(flexcon::cli::main_with(std::env::args_os()));
}
