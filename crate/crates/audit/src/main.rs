fn main() {
    std::process::exit(reach_audit::cli::run(std::env::args_os()));
}
