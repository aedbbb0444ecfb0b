use clap::Parser;
use epsimage_cli::Cli;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = epsimage_cli::run(cli) {
        eprintln!("epsimage: {e}");
        std::process::exit(e.exit_code());
    }
}
