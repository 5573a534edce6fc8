fn main() {
    std::process::exit(qsbrown::run(std::env::args_os()));
}
