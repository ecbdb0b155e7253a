fn main() {
    std::process::exit(neurodegen::cli::dispatch(std::env::args_os()));
}
