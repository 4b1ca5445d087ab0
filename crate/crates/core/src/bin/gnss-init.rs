fn main() -> std::process::ExitCode {
    gnss_init::cli::main_with_args(std::env::args_os())
}
