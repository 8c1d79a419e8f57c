fn main() {
    std::process::exit(dmssd::cli::run());
}
