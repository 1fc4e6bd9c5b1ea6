fn main() {
    std::process::exit(learn2pfed::cli::main_exit_code());
}
