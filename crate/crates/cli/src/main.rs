fn main() {
    let code = oat_cli::run(std::env::args_os().collect(), &mut std::io::stdout());
    std::process::exit(code);
}
