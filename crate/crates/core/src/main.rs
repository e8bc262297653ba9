fn main() {
    std::process::exit(cryoloop::cli::run(std::env::args_os()));
}
