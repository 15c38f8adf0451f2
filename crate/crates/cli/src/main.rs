fn main() {
    std::process::exit(sketchfem_cli::run(std::env::args_os()));
}
