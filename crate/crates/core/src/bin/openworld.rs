fn main() -> std::process::ExitCode {
    openworld::cli::main()
}
