fn main() -> std::process::ExitCode {
    tvf::cli::main_with_args(std::env::args_os())
}
