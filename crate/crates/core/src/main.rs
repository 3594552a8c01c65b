fn main() -> std::process::ExitCode {
    pgt_core::cli::main()
}
