fn main() {
    std::process::exit(mswe::cli::run());
}
