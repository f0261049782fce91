mod args;
mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use commands::{SelftestFailed, Ui, UsageError};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<SelftestFailed>() {
            return EXIT_NUMERIC;
        }
        if let Some(e) = cause.downcast_ref::<biatt_core::Error>() {
            return match e {
                biatt_core::Error::Numeric(_) => EXIT_NUMERIC,
                biatt_core::Error::InvalidConfig(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let ui = Ui::new(cli.verbose, cli.quiet);
    let result = match cli.command {
        Command::MakeToyData(a) => commands::make_toy_data(a, ui),
        Command::Train(a) => commands::train_cmd(a, ui),
        Command::Enhance(a) => commands::enhance_cmd(a, false, ui),
        Command::DumpAttention(a) => commands::enhance_cmd(a, true, ui),
        Command::Evaluate(a) => commands::evaluate_cmd(a, ui),
        Command::Selftest => commands::selftest_cmd(ui),
        Command::Sweep(a) => commands::sweep_cmd(a, ui),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    fn wrapped(e: biatt_core::Error) -> anyhow::Error {
        Err::<(), _>(e).context("training").unwrap_err()
    }

    #[test]
    fn exit_codes_follow_the_cause_chain() {
        assert_eq!(
            exit_code(&wrapped(biatt_core::Error::Numeric("loss is NaN".into()))),
            EXIT_NUMERIC
        );
        assert_eq!(
            exit_code(&wrapped(biatt_core::Error::InvalidConfig("bad".into()))),
            EXIT_USAGE
        );
        assert_eq!(
            exit_code(&wrapped(biatt_core::Error::InvalidInput("bad".into()))),
            EXIT_DATA
        );
        assert_eq!(exit_code(&anyhow::anyhow!("plain")), EXIT_DATA);
    }
}
