fn main() {
    std::process::exit(swarmtrack::cli::main_with_args(std::env::args_os()));
}
