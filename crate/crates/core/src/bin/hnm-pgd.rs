fn main() {
    std::process::exit(hnm_pgd::cli::run(std::env::args_os()));
}
