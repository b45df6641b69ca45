use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ris_ura::bound::{bound_sweep, write_bound_csv};
use ris_ura::harness::selftest::{run_selftest, write_selftest_csv};
use ris_ura::harness::{
    eb_n0, power_sweep, search_power, simulate, write_search_csv, write_sweep_csv, SearchOutcome, SweepRow,
    SystemConfig,
};
use ris_ura::numerics::{dbm_to_watts, watts_to_dbm};
use ris_ura::Result;

#[derive(Parser)]
#[command(name = "ris-ura", version, about = "RIS-aided unsourced random access simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML scenario file; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config override `key=value`, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<SystemConfig> {
        let mut cfg = match &self.config {
            Some(path) => SystemConfig::load(path)?,
            None => SystemConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(trials) = self.trials {
            cfg.trials = trials;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn sink(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(path) => Box::new(File::create(path)?),
            None => Box::new(io::stdout()),
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// PUPE at the configured powers.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// PUPE over a power grid; pilot and data power both follow the grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Powers in dBm, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        powers_dbm: Vec<f64>,
    },
    /// Smallest power reaching a target PUPE, by bisection in dB.
    Search {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.1)]
        target: f64,
        #[arg(long, default_value_t = 30.0)]
        low_dbm: f64,
        #[arg(long, default_value_t = 60.0)]
        high_dbm: f64,
        #[arg(long, default_value_t = 1.0)]
        tol_db: f64,
    },
    /// Achievability bound over a power grid with `P′ = ratio·P`.
    Bound {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        powers_dbm: Vec<f64>,
        #[arg(long, default_value_t = 0.9)]
        ratio: f64,
        #[arg(long, default_value_t = 100)]
        realizations: usize,
    },
    /// Reduced acceptance checks; exits non-zero if any check fails.
    Selftest {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate { common } => {
            let cfg = common.config()?;
            let estimate = simulate(&cfg)?;
            let row = SweepRow {
                power: cfg.data_power,
                eb_n0: eb_n0(cfg.data_power, cfg.total_channel_uses(), cfg.total_bits(), cfg.noise_power)?,
                estimate,
            };
            write_sweep_csv(&[row], common.sink()?)?;
            eprintln!("PUPE {:.4} (95% CI [{:.4}, {:.4}])", estimate.pupe, estimate.ci_low, estimate.ci_high);
            Ok(true)
        }
        Command::Sweep { common, powers_dbm } => {
            let cfg = common.config()?;
            let powers: Vec<f64> = powers_dbm.iter().map(|&d| dbm_to_watts(d)).collect();
            write_sweep_csv(&power_sweep(&cfg, &powers)?, common.sink()?)?;
            Ok(true)
        }
        Command::Search { common, target, low_dbm, high_dbm, tol_db } => {
            let cfg = common.config()?;
            let outcome = search_power(&cfg, target, tol_db, (dbm_to_watts(low_dbm), dbm_to_watts(high_dbm)))?;
            write_search_csv(&cfg, &outcome, common.sink()?)?;
            match &outcome {
                SearchOutcome::Found { power, estimate, .. } => {
                    eprintln!("PUPE {:.4} at {:.2} dBm", estimate.pupe, watts_to_dbm(*power));
                }
                SearchOutcome::Unreachable { high, .. } => {
                    eprintln!("target not reached: PUPE {:.4} at {high_dbm} dBm", high.pupe);
                }
            }
            Ok(outcome.power().is_some())
        }
        Command::Bound { common, powers_dbm, ratio, realizations } => {
            let cfg = common.config()?;
            let powers: Vec<f64> = powers_dbm.iter().map(|&d| dbm_to_watts(d)).collect();
            let rows = bound_sweep(&cfg.bound_config(ratio, realizations), &powers, ratio, cfg.seed)?;
            write_bound_csv(&rows, common.sink()?)?;
            Ok(true)
        }
        Command::Selftest { seed, out } => {
            let checks = run_selftest(seed)?;
            let sink: Box<dyn Write> = match &out {
                Some(path) => Box::new(File::create(path)?),
                None => Box::new(io::stdout()),
            };
            write_selftest_csv(&checks, sink)?;
            for c in checks.iter().filter(|c| !c.pass) {
                eprintln!("FAIL criterion {} {}: {:e} vs {:e}", c.criterion, c.name, c.value, c.threshold);
            }
            Ok(checks.iter().all(|c| c.pass))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
