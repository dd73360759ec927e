use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num_bigint::BigInt;
use num_rational::BigRational;

use strategic_mapf::auction::{run_auction, Bid, RewardSchedule};
use strategic_mapf::harness::{
    run_experiment, run_solver_trial, solver_seed, utility_curve_instances, write_outputs,
    write_utility_curves, ExperimentConfig, HarnessError, Solver,
};
use strategic_mapf::metrics::trials_csv;
use strategic_mapf::world::{make_scenario, Scenario, ScenarioKind, ScenarioParams};

#[derive(Parser)]
#[command(
    name = "smapf",
    version,
    about = "Incentive-aware multi-agent path finding experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write trials.csv / aggregates.csv.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Generate or display a scenario.
    #[command(subcommand)]
    Scenario(ScenarioCmd),
    /// Position-auction utilities.
    #[command(subcommand)]
    Auction(AuctionCmd),
    /// Write utility_curves.csv: each agent's utility as its bid varies.
    SweepUtility {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run one trial and print its outcome, optionally writing logs.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value = "auction")]
        solver: Solver,
        #[arg(long, default_value_t = 0.3)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 20.0)]
        timeout: f64,
        /// Per-tick positions CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Per-auction CSV.
        #[arg(long)]
        auction_log: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Print the scenario as JSON (or write it with --out).
    Gen {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the ASCII map.
    Show {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
}

#[derive(Subcommand)]
enum AuctionCmd {
    /// Exact allocation, payments and utilities for a bid vector.
    Demo {
        /// Comma-separated bids, e.g. 7,4,2 or 5/2,1.
        #[arg(long, value_delimiter = ',', required = true)]
        bids: Vec<BigRational>,
        /// True values (defaults to the bids).
        #[arg(long, value_delimiter = ',')]
        values: Vec<BigRational>,
        /// `harmonic`, `delayed:D`, or an explicit list like 1,1/3,1/9.
        #[arg(long, default_value = "harmonic")]
        schedule: String,
    },
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// doorway, hallway, intersection or random-obstacles.
    kind: Option<ScenarioKind>,
    /// Load a scenario JSON file instead of generating one.
    #[arg(long, conflicts_with = "kind")]
    file: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    width: usize,
    #[arg(long, default_value_t = 20)]
    height: usize,
    #[arg(long, default_value_t = 4)]
    agents: usize,
    #[arg(long, default_value_t = 1)]
    gap: usize,
    #[arg(long, default_value_t = 0)]
    obstacles: usize,
    #[arg(long, default_value_t = 1)]
    incentive_min: u32,
    #[arg(long, default_value_t = 3)]
    incentive_max: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ScenarioArgs {
    fn build(&self) -> Result<Scenario, HarnessError> {
        if let Some(path) = &self.file {
            let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
                path: path.clone(),
                source,
            })?;
            return Ok(Scenario::from_json(&text)?);
        }
        let kind = self
            .kind
            .ok_or_else(|| HarnessError::Invalid("give a scenario kind or --file".into()))?;
        let params = ScenarioParams::new(kind, self.width, self.height, self.agents)
            .gap(self.gap)
            .obstacles(self.obstacles)
            .incentives(self.incentive_min, self.incentive_max)
            .seed(self.seed);
        Ok(make_scenario(&params)?)
    }
}

/// Command-line values that replace config-file fields.
#[derive(Args, Clone, Default)]
struct Overrides {
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    timeout: Option<f64>,
    #[arg(long)]
    solvers: Option<String>,
    #[arg(long)]
    values: Option<String>,
    /// Any config key, e.g. `--set noise_sigma=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), HarnessError> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                pairs.push((k.to_string(), v));
            }
        };
        push(
            "output",
            self.output.as_ref().map(|p| p.display().to_string()),
        );
        push("trials", self.trials.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        push("jobs", self.jobs.map(|v| v.to_string()));
        push("timeout_s", self.timeout.map(|v| v.to_string()));
        push("solvers", self.solvers.clone());
        push("values", self.values.clone());
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                HarnessError::Invalid(format!("--set expects KEY=VALUE, got `{kv}`"))
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        for (k, v) in pairs {
            cfg.set(&k, &v)
                .map_err(|m| HarnessError::Invalid(format!("--{k}: {m}")))?;
        }
        cfg.validate()
    }

    fn load(&self, path: &Path) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = ExperimentConfig::load(path)?;
        self.apply(&mut cfg)?;
        Ok(cfg)
    }
}

fn parse_schedule(text: &str, k: usize) -> Result<RewardSchedule<BigRational>, HarnessError> {
    let bad = |m: String| HarnessError::Invalid(format!("--schedule: {m}"));
    if text == "harmonic" {
        return Ok(RewardSchedule::harmonic(k));
    }
    if let Some(d) = text.strip_prefix("delayed:") {
        let d: BigRational = d.parse().map_err(|e| bad(format!("{e}")))?;
        if d < BigRational::from(BigInt::from(1)) {
            return Err(bad("delay must be at least 1".into()));
        }
        return Ok(RewardSchedule::delayed(d, k));
    }
    let alpha = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<BigRational>()
                .map_err(|e| bad(format!("`{s}`: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    RewardSchedule::new(alpha).map_err(|e| bad(e.to_string()))
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

fn write_file(path: &PathBuf, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.clone(),
        source,
    })
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = overrides.load(&config)?;
            let records = run_experiment(&cfg)?;
            write_outputs(&cfg.output, &records, cfg.sweep.group_by())?;
            println!(
                "{} trials written to {}",
                records.len(),
                cfg.output.display()
            );
        }
        Command::SweepUtility { config, overrides } => {
            let cfg = overrides.load(&config)?;
            let instances = utility_curve_instances(&cfg)?;
            write_utility_curves(&cfg.output, &instances)?;
            println!(
                "utility curves written to {}",
                cfg.output.join("utility_curves.csv").display()
            );
        }
        Command::Scenario(ScenarioCmd::Gen { scenario, out }) => {
            let json = scenario.build()?.to_json();
            match out {
                Some(path) => write_file(&path, &json)?,
                None => println!("{json}"),
            }
        }
        Command::Scenario(ScenarioCmd::Show { scenario }) => {
            print!("{}", scenario.build()?.render_ascii());
        }
        Command::Auction(AuctionCmd::Demo {
            bids,
            values,
            schedule,
        }) => {
            let values = if values.is_empty() {
                bids.clone()
            } else {
                values
            };
            let schedule = parse_schedule(&schedule, bids.len())?;
            let bids: Vec<Bid<BigRational>> = bids
                .into_iter()
                .enumerate()
                .map(|(i, b)| Bid::new(i, b))
                .collect();
            let out = run_auction(&bids, &values, &schedule)
                .map_err(|e| HarnessError::Invalid(e.to_string()))?;
            println!("sigma     = [{}]", join(&out.turns));
            println!("order     = [{}]", join(&out.order));
            println!("payments  = [{}]", join(&out.payments));
            println!("utilities = [{}]", join(&out.utilities));
            println!("welfare   = {}", out.welfare);
        }
        Command::Simulate {
            scenario,
            solver,
            noise_sigma,
            timeout,
            trace,
            auction_log,
        } => {
            let scenario = scenario.build()?;
            let cfg = ExperimentConfig {
                noise_sigma,
                timeout_s: timeout,
                ..Default::default()
            };
            cfg.validate()?;
            let run = run_solver_trial(
                &scenario,
                solver,
                &cfg,
                solver_seed(scenario.rng_seed, solver),
            )?;
            if let Some(path) = trace {
                write_file(&path, &run.trace.to_trace_log())?;
            }
            if let Some(path) = auction_log {
                write_file(&path, &run.trace.to_auction_log())?;
            }
            print!("{}", trials_csv(std::slice::from_ref(&run.record)));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
