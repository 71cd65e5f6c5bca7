fn main() {
    std::process::exit(visualness::cli::main());
}
