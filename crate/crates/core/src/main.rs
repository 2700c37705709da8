fn main() {
    std::process::exit(ctg_ssl::cli::run(std::env::args_os()));
}
