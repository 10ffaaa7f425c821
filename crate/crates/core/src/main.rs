fn main() {
    std::process::exit(residuum::cli::run(std::env::args_os()));
}
