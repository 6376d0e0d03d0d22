fn main() {
    std::process::exit(radar_har::cli::run(std::env::args_os()));
}
