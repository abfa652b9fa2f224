//! `isodg` command-line driver.

fn main() {
    std::process::exit(isodg::cli::main_with_args(std::env::args_os()));
}
