fn main() {
    std::process::exit(dsbp::harness::cli::main());
}
