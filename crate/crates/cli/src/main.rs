mod args;
mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Index(a) => commands::index(a),
        Command::Shard(a) => commands::shard(a),
        Command::Train(a) => commands::train(a),
        Command::Fedtrain(a) => commands::fedtrain(a),
        Command::Serve(a) => commands::serve_cmd(a),
        Command::Client(a) => commands::client(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
