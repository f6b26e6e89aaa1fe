fn main() {
    std::process::exit(slfrac::io::cli_main(std::env::args_os()));
}
