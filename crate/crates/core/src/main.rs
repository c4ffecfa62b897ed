fn main() {
    std::process::exit(dimcim::cli::run(std::env::args_os()));
}
