use clap::Parser;

fn main() {
    let cli = noisyglm_cli::Cli::parse();
    std::process::exit(noisyglm_cli::run(&cli));
}
