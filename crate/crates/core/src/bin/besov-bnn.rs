fn main() {
    std::process::exit(besov_bnn::cli::main());
}
