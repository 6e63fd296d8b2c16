fn main() {
    std::process::exit(evcs::cli::main_with(std::env::args_os()));
}
