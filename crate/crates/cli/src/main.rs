fn main() {
    std::process::exit(rexer_cli::run(std::env::args_os()));
}
