//! Thin command-line front end: `hsim run` simulates a scenario and writes
//! trajectory/event files, `hsim verify` runs the scenario's oracle suite.

use std::collections::BTreeMap;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use herglotz::cli::{self, IntegratorConfig, OutputConfig, RunConfig};

#[derive(Parser)]
#[command(name = "hsim", version, about = "Hybrid simulation of dissipative constrained mechanics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write the trajectory CSV + events JSON.
    Run(CommonArgs),
    /// Compare a scenario against its closed-form oracles.
    Verify(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config file; command-line flags override its fields.
    #[arg(long)]
    config: Option<String>,
    /// Scenario name: sphere | cylinder.
    #[arg(long)]
    scenario: Option<String>,
    /// Parameter override, repeatable: --set beta=0.1
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, default_value_t = 0.0)]
    t_start: f64,
    #[arg(long)]
    t_end: Option<f64>,
    /// Trajectory CSV path (events go to `<stem>.events.json`).
    #[arg(long)]
    out: Option<String>,
    #[arg(long, default_value_t = 0.01)]
    sample_dt: f64,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    abs_tol: Option<f64>,
    #[arg(long)]
    event_tol: Option<f64>,
    #[arg(long)]
    max_step: Option<f64>,
}

fn build_config(args: &CommonArgs) -> Result<RunConfig, String> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("config error: cannot read {path}: {e}"))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig {
            scenario: String::new(),
            params: BTreeMap::new(),
            t_span: [0.0, 1.0],
            integrator: IntegratorConfig::default(),
            output: None,
        },
    };

    if let Some(s) = &args.scenario {
        config.scenario = s.clone();
    }
    if config.scenario.is_empty() {
        return Err("config error: no scenario given (use --scenario or --config)".into());
    }
    for kv in &args.set {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| format!("config error: --set expects KEY=VALUE, got '{kv}'"))?;
        let value: f64 = value
            .parse()
            .map_err(|_| format!("config error: value for '{key}' is not a number: '{value}'"))?;
        config.params.insert(key.to_string(), value);
    }
    if args.config.is_none() || args.t_end.is_some() {
        let t_end = args
            .t_end
            .ok_or_else(|| "config error: --t-end is required".to_string())?;
        config.t_span = [args.t_start, t_end];
    }
    if let Some(out) = &args.out {
        config.output = Some(OutputConfig {
            path: out.clone(),
            format: "csv".into(),
            sample_dt: args.sample_dt,
        });
    }
    if args.rel_tol.is_some() {
        config.integrator.rel_tol = args.rel_tol;
    }
    if args.abs_tol.is_some() {
        config.integrator.abs_tol = args.abs_tol;
    }
    if args.event_tol.is_some() {
        config.integrator.event_tol = args.event_tol;
    }
    if args.max_step.is_some() {
        config.integrator.max_step = args.max_step;
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout();
    let (args, is_verify) = match &cli.command {
        Command::Run(a) => (a, false),
        Command::Verify(a) => (a, true),
    };
    let config = match build_config(args) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("{msg}");
            return ExitCode::from(cli::EXIT_CONFIG as u8);
        }
    };
    let code = if is_verify {
        cli::verify(&config, &mut stdout)
    } else {
        cli::run(&config, &mut stdout)
    };
    ExitCode::from(code as u8)
}
