fn main() {
    std::process::exit(decgan::cli::run(std::env::args_os()));
}
