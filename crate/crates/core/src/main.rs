fn main() {
    std::process::exit(mfi_core::cli::main_with_args(std::env::args_os()));
}
