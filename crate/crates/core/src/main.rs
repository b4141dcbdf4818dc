fn main() {
    std::process::exit(breathsync::cli::run(std::env::args_os()));
}
