fn main() {
    std::process::exit(taser_harness::cli::main_with_args(std::env::args_os()));
}
