fn main() {
    std::process::exit(ccf_core::cli::main_entry());
}
