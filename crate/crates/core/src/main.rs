fn main() {
    std::process::exit(qaforge_core::cli::dispatch(std::env::args_os()));
}
