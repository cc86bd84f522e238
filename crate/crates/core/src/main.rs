fn main() {
    std::process::exit(hierstream::cli::run(std::env::args_os()));
}
