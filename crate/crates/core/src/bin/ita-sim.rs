fn main() {
    std::process::exit(ita_core::cli::run(std::env::args_os()));
}
