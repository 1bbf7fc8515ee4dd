fn main() -> std::process::ExitCode {
    std::process::ExitCode::from(predictive_cbf::cli::run(std::env::args_os()))
}
