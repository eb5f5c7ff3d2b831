fn main() {
    std::process::exit(morphiris::harness::cli::run());
}
