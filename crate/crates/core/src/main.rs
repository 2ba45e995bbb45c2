fn main() {
    std::process::exit(lq_replicate::cli::main_entry());
}
