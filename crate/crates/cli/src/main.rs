fn main() {
    std::process::exit(flowgnn_cli::dispatch(std::env::args_os()));
}
