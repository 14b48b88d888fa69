use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches};
use unfold_cli::config::{read_config_file, Command, ConfigMap, RunConfig};
use unfold_cli::{run, CliError};

fn subcommand(c: Command) -> clap::Command {
    let about = match c {
        Command::Generate => "Complete the target panel of a reference mosaic",
        Command::Edit => "Re-synthesize a rectangle of a scene panel",
        Command::Train => "Train the toy denoiser",
        Command::Ablate => "Sweep grid, cascade, segment and prompt settings",
        Command::VizAttn => "Write attention heatmaps for one completion",
    };
    let mut cmd = clap::Command::new(c.name()).about(about).arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("key = value config file; flags take precedence"),
    );
    for k in c.keys() {
        cmd = cmd.arg(
            Arg::new(k.key)
                .long(k.key.replace('_', "-"))
                .value_name("VALUE")
                .help(k.help)
                .action(ArgAction::Set),
        );
    }
    cmd
}

fn cli() -> clap::Command {
    Command::ALL.into_iter().fold(
        clap::Command::new("unfold")
            .about("Reference-guided subject generation by mosaic completion")
            .version(env!("CARGO_PKG_VERSION"))
            .subcommand_required(true),
        |app, c| app.subcommand(subcommand(c)),
    )
}

fn resolve(name: &str, m: &ArgMatches) -> Result<RunConfig, CliError> {
    let command: Command = name.parse()?;
    let file = match m.get_one::<String>("config") {
        Some(p) => read_config_file(p.as_ref())?,
        None => ConfigMap::new(),
    };
    let flags: ConfigMap = command
        .keys()
        .into_iter()
        .filter_map(|k| m.get_one::<String>(k.key).map(|v| (k.key.to_owned(), v.clone())))
        .collect();
    RunConfig::resolve(command, &file, &flags)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    match resolve(name, sub).and_then(|cfg| run(&cfg)) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("unfold {name}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
