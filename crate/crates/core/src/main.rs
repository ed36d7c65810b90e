fn main() {
    std::process::exit(daef::harness::cli::main());
}
