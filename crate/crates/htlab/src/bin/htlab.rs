fn main() -> std::process::ExitCode {
    htlab::cli::main_entry()
}
