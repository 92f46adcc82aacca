fn main() {
    std::process::exit(glu_asr_cli::run(std::env::args_os()));
}
