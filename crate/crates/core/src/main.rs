fn main() {
    std::process::exit(chipscan::cli::run(std::env::args_os()));
}
