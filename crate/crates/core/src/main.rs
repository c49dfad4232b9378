fn main() {
    std::process::exit(distacc_core::cli::run(std::env::args_os()));
}
