fn main() {
    env_logger::init();
    std::process::exit(zol::cli::run(std::env::args_os()));
}
