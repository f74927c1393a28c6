fn main() {
    std::process::exit(cbf_rl::cli::run(std::env::args_os()));
}
