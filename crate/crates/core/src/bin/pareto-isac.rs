fn main() {
    std::process::exit(pareto_isac::cli::run(std::env::args_os()));
}
