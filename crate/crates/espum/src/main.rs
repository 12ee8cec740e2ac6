fn main() {
    std::process::exit(espum::cli::run());
}
