fn main() {
    std::process::exit(polymer_cli::run_args(std::env::args_os()));
}
