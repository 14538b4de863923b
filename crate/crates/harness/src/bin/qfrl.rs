fn main() {
    std::process::exit(qforce_harness::cli::main_with_args(std::env::args_os()));
}
