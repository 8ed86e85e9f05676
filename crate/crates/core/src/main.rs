fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(stcnn::cli::dispatch(&args));
}
