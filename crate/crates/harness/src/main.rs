fn main() {
    std::process::exit(migo_harness::run_cli(std::env::args_os()));
}
