use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

use fedcorr::config::{load_config_unvalidated, ExperimentConfig};
use fedcorr::io::export_csv;
use fedcorr::protocol::prepare;
use fedcorr::runner;

const OUTPUT_DIR_ENV: &str = "FEDCORR_OUTPUT_DIR";

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

/// One `--key value` flag per configuration key; boolean keys may omit the value.
fn override_args() -> Vec<Arg> {
    let defaults = toml::Table::try_from(ExperimentConfig::default()).expect("config always serialises");
    ExperimentConfig::keys()
        .into_iter()
        .map(|key| {
            let is_bool = matches!(defaults.get(&key), Some(toml::Value::Boolean(_)));
            let arg = Arg::new(key.clone())
                .long(flag_name(&key))
                .alias(key.clone())
                .value_name("VALUE")
                .help_heading("Configuration overrides")
                .help(format!("Overrides `{key}`"));
            if is_bool {
                arg.num_args(0..=1).default_missing_value("true")
            } else {
                arg.num_args(1)
            }
        })
        .collect()
}

fn config_arg(required: bool) -> Arg {
    Arg::new("config")
        .long("config")
        .short('c')
        .value_name("PATH")
        .value_parser(clap::value_parser!(PathBuf))
        .required(required)
        .help("TOML configuration file; omitted keys take their defaults")
}

fn cli() -> Command {
    Command::new("fedcorr")
        .about("Federated learning with client-level label-noise identification and correction")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            Command::new("run")
                .about("Run an experiment and write its outputs")
                .after_help(format!("The {OUTPUT_DIR_ENV} environment variable overrides `output_dir`; an explicit --output-dir flag wins over both."))
                .arg(config_arg(false))
                .args(override_args()),
        )
        .subcommand(
            Command::new("validate-config")
                .about("Validate a configuration and print the resolved document")
                .arg(config_arg(false))
                .args(override_args()),
        )
        .subcommand(
            Command::new("export-dataset")
                .about("Write the prepared training or test set as CSV")
                .arg(config_arg(false))
                .arg(
                    Arg::new("out")
                        .long("out")
                        .short('o')
                        .value_name("PATH")
                        .value_parser(clap::value_parser!(PathBuf))
                        .required(true),
                )
                .arg(
                    Arg::new("split")
                        .long("split")
                        .value_parser(["train", "test"])
                        .default_value("train"),
                )
                .arg(
                    Arg::new("given-labels")
                        .long("given-labels")
                        .action(ArgAction::SetTrue)
                        .help("Write the noisy given labels instead of the true labels"),
                )
                .args(override_args()),
        )
}

fn resolve(m: &ArgMatches) -> fedcorr::Result<ExperimentConfig> {
    let mut cfg = match m.get_one::<PathBuf>("config") {
        Some(path) => load_config_unvalidated(path)?,
        None => ExperimentConfig::default(),
    };
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        if !dir.is_empty() {
            cfg.output_dir = PathBuf::from(dir);
        }
    }
    for key in ExperimentConfig::keys() {
        if let Some(value) = m.get_one::<String>(&key) {
            cfg.set(&key, value)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(m: &ArgMatches) -> fedcorr::Result<()> {
    match m.subcommand() {
        Some(("run", sub)) => {
            let cfg = resolve(sub)?;
            let out = runner::run(&cfg)?;
            println!(
                "{} seed={} config_hash={} final_accuracy={:.4} best_accuracy={:.4} comm_cost={}",
                cfg.output_dir.display(),
                out.result.seed,
                out.result.config_hash,
                out.result.final_accuracy,
                out.result.best_accuracy,
                out.result.comm_cost
            );
            Ok(())
        }
        Some(("validate-config", sub)) => {
            let cfg = resolve(sub)?;
            println!("# seed={} config_hash={}", cfg.seed, cfg.hash());
            print!("{}", cfg.to_toml_string());
            Ok(())
        }
        Some(("export-dataset", sub)) => {
            let cfg = resolve(sub)?;
            let p = prepare(&cfg)?;
            let ds = if sub.get_one::<String>("split").map(String::as_str) == Some("test") { &p.test } else { &p.train };
            let out = sub.get_one::<PathBuf>("out").expect("required");
            export_csv(ds, out, sub.get_flag("given-labels"))?;
            eprintln!("wrote {} rows to {}", ds.len(), out.display());
            Ok(())
        }
        _ => unreachable!("subcommand is required"),
    }
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    match execute(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
