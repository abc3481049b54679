fn main() {
    std::process::exit(lipcert::cli::main());
}
