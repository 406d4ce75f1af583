fn main() {
    std::process::exit(multibubble::cli::run());
}
