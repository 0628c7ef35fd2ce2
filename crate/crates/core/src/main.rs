fn main() {
    let code = lqadmm::cli::dispatch(std::env::args());
    std::process::exit(code);
}
