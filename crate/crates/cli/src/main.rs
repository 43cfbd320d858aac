fn main() {
    std::process::exit(pass_cli::cli_main(std::env::args()));
}
