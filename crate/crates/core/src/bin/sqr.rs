fn main() {
    std::process::exit(sqr::cli::main_from(std::env::args_os()));
}
