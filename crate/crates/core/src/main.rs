fn main() {
    std::process::exit(imunet::cli::run(std::env::args_os()));
}
