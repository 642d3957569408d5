fn main() {
    std::process::exit(sghormer::cli::run(std::env::args_os()));
}
