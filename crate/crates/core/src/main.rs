fn main() -> std::process::ExitCode {
    cape::cli::main_entry()
}
