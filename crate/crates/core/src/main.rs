fn main() -> std::process::ExitCode {
    kelly_lab::cli::main()
}
