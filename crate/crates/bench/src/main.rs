fn main() {
    std::process::exit(cropbench::cli::run(std::env::args_os()));
}
