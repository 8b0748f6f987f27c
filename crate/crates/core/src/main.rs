fn main() {
    std::process::exit(bl_engine::cli::main_with_args(std::env::args_os()));
}
