fn main() {
    std::process::exit(uiou::cli::run(std::env::args_os()));
}
