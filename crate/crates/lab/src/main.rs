fn main() {
    std::process::exit(overparam_lab::cli::run(std::env::args_os()));
}
