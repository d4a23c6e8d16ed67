fn main() {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    std::process::exit(cobotguard_cli::main_with(std::env::args_os()));
}
