fn main() {
    std::process::exit(fedgpl::cli::cli_main(std::env::args_os()));
}
