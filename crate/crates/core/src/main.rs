fn main() {
    std::process::exit(fedge::cli::dispatch(std::env::args_os()));
}
