fn main() {
    std::process::exit(social_learning::harness::cli::main_with_args(std::env::args_os()));
}
