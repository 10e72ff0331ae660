fn main() {
    std::process::exit(emc_harness::cli::main_with_args(std::env::args_os()));
}
