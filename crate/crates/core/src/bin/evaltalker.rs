fn main() -> std::process::ExitCode {
    evaltalker::cli::main_with(std::env::args_os())
}
