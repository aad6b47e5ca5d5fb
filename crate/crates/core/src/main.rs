fn main() {
    std::process::exit(psi_caputo::cli::run(std::env::args_os()));
}
