fn main() {
    std::process::exit(longtail_lab::cli::run(std::env::args_os()));
}
