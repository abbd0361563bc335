fn main() -> std::process::ExitCode {
    homeostat::harness::cli::main()
}
