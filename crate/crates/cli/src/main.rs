use clap::Parser;

fn main() {
    let cli = sbr_cli::Cli::parse();
    if let Err(err) = sbr_cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(sbr_cli::exit_code_for(&err));
    }
}
