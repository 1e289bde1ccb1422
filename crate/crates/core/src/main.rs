fn main() {
    std::process::exit(robust_anneal::cli::run(std::env::args_os()));
}
