use std::path::Path;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches};

use curator::config::{PipelineConfig, KEYS};
use curator::pipeline::{run, Command};

fn cli() -> clap::Command {
    let mut app = clap::Command::new("curator")
        .about("Select high-quality vision-language instruction data with a learned selector")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .global(true)
                .help("flat key = value config file; flags override it"),
        );
    for spec in KEYS {
        let arg = Arg::new(spec.key).long(spec.key).help(spec.help).global(true);
        app = app.arg(match spec.value {
            Some(v) => arg.value_name(v).action(ArgAction::Set),
            None => arg.action(ArgAction::SetTrue),
        });
    }
    for cmd in Command::ALL {
        app = app.subcommand(clap::Command::new(cmd.name()).about(cmd.about()));
    }
    app
}

fn overrides(m: &ArgMatches) -> Vec<(&'static str, String)> {
    KEYS.iter()
        .filter_map(|spec| match spec.value {
            Some(_) => m.get_one::<String>(spec.key).map(|v| (spec.key, v.clone())),
            None => m.get_flag(spec.key).then(|| (spec.key, "true".to_string())),
        })
        .collect()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("a subcommand is required");
    let cmd: Command = name.parse().expect("subcommands come from Command::ALL");
    let flags = overrides(sub);
    let config = sub.get_one::<String>("config").map(Path::new);
    let result = PipelineConfig::resolve(config, flags.iter().map(|(k, v)| (*k, v.as_str())))
        .and_then(|cfg| run(cmd, &cfg));
    match result {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("curator {cmd}: {}: {e}", e.name());
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    #[test]
    fn cli_definition_is_consistent() {
        super::cli().debug_assert();
    }
}
