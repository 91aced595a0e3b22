fn main() {
    std::process::exit(segment_auction::cli::main_with_args(std::env::args_os()));
}
