use clap::Parser;
use grain_attr_cli::{run, Cli, CliError, Command};

#[tokio::main]
async fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return;
        }
        Err(e) => {
            let rendered = e.to_string();
            let message = rendered
                .lines()
                .take_while(|l| !l.trim().is_empty())
                .map(str::trim)
                .collect::<Vec<_>>()
                .join(" ");
            fail(CliError::new("usage", message.trim_start_matches("error: ")));
        }
    };
    if matches!(cli.command, Command::Serve(_)) {
        tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    }
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = run(cli, &mut stdout).await {
        fail(e);
    }
}

fn fail(e: CliError) -> ! {
    eprintln!("{}", e.to_line());
    std::process::exit(e.exit_code);
}
