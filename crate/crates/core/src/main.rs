fn main() {
    std::process::exit(bangride::cli::run(std::env::args_os()));
}
