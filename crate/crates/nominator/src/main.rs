fn main() {
    std::process::exit(nominator::cli::run(std::env::args_os()));
}
