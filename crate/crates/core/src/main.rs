fn main() -> std::process::ExitCode {
    pulse_e2e::cli::run(std::env::args_os())
}
