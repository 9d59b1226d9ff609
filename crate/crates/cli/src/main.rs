use clap::Parser;

use hagnet_cli::args::{Cli, Command};
use hagnet_cli::commands;

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(args) => commands::cmd_generate(args).map(|_| ()),
        Command::Train(args) => commands::cmd_train(args).map(|_| ()),
        Command::Eval(args) => commands::cmd_eval(args).map(|_| ()),
        Command::Search(args) => commands::cmd_search(args).map(|_| ()),
        Command::Report(args) => commands::cmd_report(args).map(|_| ()),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
