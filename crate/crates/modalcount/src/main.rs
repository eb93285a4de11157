fn main() {
    std::process::exit(modalcount::cli::run());
}
