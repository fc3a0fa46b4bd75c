fn main() {
    std::process::exit(mug_cli::run(std::env::args_os()));
}
