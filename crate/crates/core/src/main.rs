fn main() {
    std::process::exit(surprisal_core::cli::run(std::env::args_os()));
}
