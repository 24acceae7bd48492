fn main() {
    std::process::exit(jitai_cli::run(std::env::args_os()));
}
