fn main() {
    std::process::exit(movi_core::cli::main_with_args(std::env::args_os()));
}
