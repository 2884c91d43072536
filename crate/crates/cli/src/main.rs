use clap::Parser;

fn main() {
    let cli = match promptasr_cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with successful exit
            if e.use_stderr() {
                eprint!("{e}");
                std::process::exit(1);
            }
            print!("{e}");
            std::process::exit(0);
        }
    };
    if let Err(err) = promptasr_cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(promptasr_cli::exit_code(&err));
    }
}
