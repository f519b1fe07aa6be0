fn main() {
    std::process::exit(eqplan::cli::run(std::env::args_os()));
}
