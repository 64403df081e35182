fn main() {
    std::process::exit(airyguide::cli_runner::run(std::env::args_os()));
}
