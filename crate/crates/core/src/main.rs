fn main() {
    std::process::exit(acoustic_lab::cli::run(std::env::args_os()));
}
