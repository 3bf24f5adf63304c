fn main() {
    std::process::exit(rtkd::cli::main_with(std::env::args_os().collect()));
}
