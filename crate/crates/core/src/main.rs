fn main() -> std::process::ExitCode {
    countmix::cli::main()
}
