fn main() {
    std::process::exit(bamlab::cli::run(std::env::args_os()));
}
