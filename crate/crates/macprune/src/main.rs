fn main() {
    std::process::exit(macprune::cli::main());
}
