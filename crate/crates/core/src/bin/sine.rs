fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(sine_core::cli::run_command(&argv));
}
