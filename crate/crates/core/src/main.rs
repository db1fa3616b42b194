fn main() {
    std::process::exit(narrow_pnp::cli::run(std::env::args_os()));
}
