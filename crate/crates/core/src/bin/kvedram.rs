fn main() {
    std::process::exit(kvedram::cli::main());
}
