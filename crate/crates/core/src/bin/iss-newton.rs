fn main() {
    std::process::exit(iss_newton::cli::run(std::env::args_os()));
}
