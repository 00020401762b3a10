fn main() {
    std::process::exit(corl::cli::run_from(std::env::args_os()));
}
