fn main() {
    std::process::exit(trajfield_cli::run(std::env::args_os()));
}
