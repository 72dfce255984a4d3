fn main() {
    std::process::exit(ruelle::cli::run(std::env::args_os()));
}
