fn main() {
    std::process::exit(gatenet::cli::dispatch(std::env::args_os()));
}
