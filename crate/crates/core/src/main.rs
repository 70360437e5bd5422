fn main() {
    std::process::exit(pflash::cli::dispatch(std::env::args_os()));
}
