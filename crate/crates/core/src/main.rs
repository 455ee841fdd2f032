fn main() -> std::process::ExitCode {
    congeal::cli::main()
}
