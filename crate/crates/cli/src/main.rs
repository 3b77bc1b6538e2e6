fn main() {
    std::process::exit(redlab_cli::run(std::env::args_os()));
}
