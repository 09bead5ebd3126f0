fn main() {
    std::process::exit(pacesort::cli::run(std::env::args_os()));
}
