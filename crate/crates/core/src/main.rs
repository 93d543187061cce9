fn main() {
    std::process::exit(rmsim::cli::main_entry());
}
