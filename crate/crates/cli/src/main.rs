fn main() {
    let argv: Vec<String> = std::env::args().collect();
    if let Err(err) = ylab_cli::run(&argv) {
        eprintln!("{err}");
        std::process::exit(err.exit_code());
    }
}
