fn main() {
    std::process::exit(dosekit_cli::run(std::env::args_os()));
}
