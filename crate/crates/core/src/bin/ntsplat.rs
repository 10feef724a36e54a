fn main() {
    std::process::exit(ntsplat::cli::run(std::env::args_os()));
}
