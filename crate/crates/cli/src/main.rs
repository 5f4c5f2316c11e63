use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pvfed_core::harness::{
    complexity_report, criterion, preset, run_config, write_outputs, CalibrationSettings, RunConfig, CRITERIA,
    PRESETS,
};

#[derive(Parser)]
#[command(name = "pvfed", version, about = "Simulate private Byzantine-tolerant federated averaging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// TOML run configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named configuration, see `pvfed presets`.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Source {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            (None, Some(name)) => match preset(name) {
                Some(c) => c,
                None => bail!("unknown preset {name:?}; known: {}", PRESETS.join(", ")),
            },
            (None, None) => bail!("pass --config FILE or --preset NAME"),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write metrics.
    Run {
        #[command(flatten)]
        source: Source,
        /// Directory for metrics.csv, inclusion.csv, messages.csv and summary.json.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Calibrate the blaming thresholds for a configuration.
    Calibrate {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 40)]
        trials: u32,
        #[arg(long, default_value_t = 100)]
        validation_trials: u32,
    },
    /// Run a configuration and compare message counts with the bounds.
    Complexity {
        #[command(flatten)]
        source: Source,
    },
    /// Run acceptance checks (all of them if none are named).
    Check {
        names: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// List presets, or print one as TOML.
    Presets { name: Option<String> },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { source, out_dir } => {
            let cfg = source.load()?;
            let out = run_config(&cfg)?;
            let s = &out.summary;
            println!("{} seed={} n_c={} n_a={} rho={} horizon={}", s.name, s.seed, s.n_c, s.n_a, s.rho, s.horizon);
            println!("sigma2={:.4} rdp_epsilon={:.4} alpha={}", s.sigma2, s.epsilon_rdp, s.alpha);
            for a in &s.aggregators {
                let dist = a.final_distance.map_or("-".to_string(), |d| format!("{d:.6}"));
                println!(
                    "aggregator {} {}: {} rounds, final distance {dist}",
                    a.id,
                    if a.honest { "honest" } else { "byzantine" },
                    a.rounds_finalized
                );
            }
            println!("messages={} bytes={} trace={}", s.messages_total, s.bytes_total, s.trace_hash);
            if let Some(dir) = out_dir {
                write_outputs(&out, &dir).with_context(|| format!("writing {}", dir.display()))?;
                println!("wrote {}", dir.display());
            }
            for v in &s.violations {
                println!("violation: {v}");
            }
            Ok(out.ok())
        }
        Command::Calibrate { source, trials, validation_trials } => {
            let cfg = source.load()?;
            let settings = CalibrationSettings { trials, validation_trials, seed: cfg.seed, ..Default::default() };
            let c = cfg.calibrate(&settings)?;
            println!("expected_var = {}", c.params.expected_var);
            println!("sec_param = {}", c.params.sec_param);
            println!("delta_max = {}", c.params.delta_max);
            println!("largest honest variance {:.4}, spread {}", c.max_var, c.max_spread);
            println!("false blame rate on {validation_trials} fresh trials: {:.3}", c.false_blame_rate);
            Ok(true)
        }
        Command::Complexity { source } => {
            let cfg = source.load()?;
            let out = run_config(&cfg)?;
            let r = complexity_report(&out.report, &out.prepared.sim.params);
            println!("{r}");
            Ok(r.ok && out.ok())
        }
        Command::Check { names, seed } => {
            let names: Vec<String> =
                if names.is_empty() { CRITERIA.iter().map(|s| s.to_string()).collect() } else { names };
            let mut ok = true;
            for n in &names {
                let Some(v) = criterion(n, seed) else {
                    bail!("unknown check {n:?}; known: {}", CRITERIA.join(", "));
                };
                println!("{v}");
                ok &= v.passed;
            }
            Ok(ok)
        }
        Command::Presets { name: None } => {
            for p in PRESETS {
                println!("{p}");
            }
            Ok(true)
        }
        Command::Presets { name: Some(name) } => match preset(&name) {
            Some(c) => {
                print!("{}", c.to_toml());
                Ok(true)
            }
            None => bail!("unknown preset {name:?}"),
        },
    }
}
