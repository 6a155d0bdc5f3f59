fn main() {
    std::process::exit(keyweight::cli::main())
}
