fn main() -> std::process::ExitCode {
    confluence::cli::main_with(std::env::args_os())
}
