fn main() {
    std::process::exit(affinedim_cli::main_with_args(std::env::args_os()));
}
