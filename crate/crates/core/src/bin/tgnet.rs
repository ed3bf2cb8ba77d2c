fn main() {
    std::process::exit(tgnet::cli::run(std::env::args_os()));
}
