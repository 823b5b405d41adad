fn main() {
    std::process::exit(phonon::cli::main_from_args(std::env::args_os()));
}
