fn main() {
    std::process::exit(unifront::cli::run_from(std::env::args_os()));
}
