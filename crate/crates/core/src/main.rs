fn main() {
    std::process::exit(cupnet::cli::run(std::env::args_os()));
}
