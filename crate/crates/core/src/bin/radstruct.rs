fn main() -> std::process::ExitCode {
    radstruct::cli::main()
}
