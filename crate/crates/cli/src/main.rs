fn main() {
    std::process::exit(oneway_cli::run(std::env::args_os()));
}
