fn main() {
    std::process::exit(gqnloc_cli::run(std::env::args_os()));
}
