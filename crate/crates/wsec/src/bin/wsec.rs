fn main() {
    std::process::exit(wsec::cli::run(std::env::args_os()));
}
