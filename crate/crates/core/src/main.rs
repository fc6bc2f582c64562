fn main() {
    std::process::exit(wsbart::cli::run(std::env::args_os()));
}
