fn main() {
    std::process::exit(fieldnet_cli::run(std::env::args_os()));
}
