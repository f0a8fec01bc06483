fn main() {
    std::process::exit(swae::cli::run(std::env::args_os()));
}
