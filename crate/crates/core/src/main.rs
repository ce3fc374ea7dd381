fn main() {
    std::process::exit(toeplitz_arma::cli::run(std::env::args_os()));
}
