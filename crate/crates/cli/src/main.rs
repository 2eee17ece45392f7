use std::process::ExitCode;

use clap::error::ErrorKind;
use restore_cli::commands::{self, Status};
use restore_cli::config::{parse_cli, Command, Mode, ParseFailure, RunConfig};
use restore_cli::error::CliResult;

fn run(command: Command) -> CliResult<Status> {
    match command {
        Command::Denoise(args) => commands::cmd_denoise(&RunConfig::from_args(Mode::Denoise, &args)?),
        Command::Inpaint(args) => commands::cmd_inpaint(&RunConfig::from_args(Mode::Inpaint, &args)?),
        Command::Hist(args) => {
            let text = commands::cmd_hist(&args.input, args.k, args.out_dir.as_deref())?;
            print!("{text}");
            Ok(Status::Converged)
        }
        Command::W1(args) => {
            println!("{}", commands::cmd_w1(&args.first, &args.second)?);
            Ok(Status::Converged)
        }
        Command::Experiment(args) => commands::cmd_experiment(&args),
    }
}

fn main() -> ExitCode {
    let cli = match parse_cli(std::env::args_os()) {
        Ok(cli) => cli,
        Err(ParseFailure::Clap(e)) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
        Err(ParseFailure::Config(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(status) => {
            if status == Status::NotConverged {
                eprintln!("warning: stopped at the iteration limit before reaching the tolerance");
            }
            ExitCode::from(status.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
