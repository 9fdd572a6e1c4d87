fn main() {
    std::process::exit(reco_kd::cli::main_with_args(std::env::args_os()));
}
