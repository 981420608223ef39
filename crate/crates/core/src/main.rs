fn main() {
    std::process::exit(lfns::cli::run(std::env::args_os()));
}
