fn main() {
    std::process::exit(resmtl::cli::run(std::env::args_os()));
}
