fn main() {
    std::process::exit(morphnmt::cli::run(std::env::args_os()));
}
