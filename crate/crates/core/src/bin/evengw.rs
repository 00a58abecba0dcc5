fn main() {
    std::process::exit(evengw::cli::run(std::env::args_os()));
}
