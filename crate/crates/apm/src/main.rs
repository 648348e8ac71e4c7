fn main() {
    std::process::exit(apm::cli::run());
}
