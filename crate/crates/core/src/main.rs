use clap::Parser;

fn main() {
    let args = layerforge::cli::Args::parse();
    std::process::exit(layerforge::cli::main_with(args));
}
