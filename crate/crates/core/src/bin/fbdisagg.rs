fn main() {
    std::process::exit(fbdisagg::cli::run(std::env::args_os()));
}
