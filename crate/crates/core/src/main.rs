fn main() {
    std::process::exit(taskfetch::cli::main());
}
