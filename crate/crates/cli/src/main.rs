fn main() {
    std::process::exit(srgan_cli::run(std::env::args_os()));
}
