fn main() {
    std::process::exit(fokker_cli::main_with_args(std::env::args_os()));
}
