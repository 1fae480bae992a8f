fn main() {
    std::process::exit(resdistill_cli::dispatch(std::env::args_os()));
}
