fn main() -> std::process::ExitCode {
    threshtest::cli::main()
}
