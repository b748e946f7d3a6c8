fn main() {
    std::process::exit(wapilog::cli::main());
}
