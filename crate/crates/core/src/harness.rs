//! Experiment configuration, seeded trial sweeps and CSV output.
//!
//! Configs are flat `key = value` text with `#` comments:
//!
//! ```text
//! kinds = doorway, intersection
//! width = 20
//! height = 20
//! sweep = n_agents
//! values = 4..50:2
//! gap_size = 2
//! solvers = auction, random-ordering
//! trials = 100
//! seed = 7
//! output = results/agents
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction::{sweep_utilities, Bid, RewardSchedule};
use crate::cbs::{run_cbs_trial, CbsError, CbsVariant};
use crate::metrics::{
    aggregate, aggregates_csv, trials_csv, utility_curves_csv, GroupBy, MetricsError, TrialRecord,
};
use crate::planner::{run_trial, Resolver, ScheduleRule, TrialLimits, TrialRun};
use crate::world::{make_scenario, Scenario, ScenarioError, ScenarioKind, ScenarioParams};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SMAPF_OUT_DIR";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Cbs(#[from] CbsError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl HarnessError {
    /// 2 for configuration problems, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Io { .. } => 3,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Solver {
    Auction,
    RandomOrdering,
    Fifo,
    Cbs,
    CbsRandom,
}

impl Solver {
    pub const ALL: [Solver; 5] = [
        Solver::Auction,
        Solver::RandomOrdering,
        Solver::Fifo,
        Solver::Cbs,
        Solver::CbsRandom,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Solver::Auction => "auction",
            Solver::RandomOrdering => "random-ordering",
            Solver::Fifo => "fifo",
            Solver::Cbs => "cbs",
            Solver::CbsRandom => "cbs-random",
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Solver {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Solver::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown solver `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepVar {
    NAgents,
    GapSize,
    NObstacles,
}

impl SweepVar {
    pub fn group_by(&self) -> GroupBy {
        match self {
            SweepVar::NAgents => GroupBy::NAgents,
            SweepVar::GapSize => GroupBy::GapSize,
            SweepVar::NObstacles => GroupBy::NObstacles,
        }
    }
}

impl FromStr for SweepVar {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "n_agents" => Ok(SweepVar::NAgents),
            "gap_size" => Ok(SweepVar::GapSize),
            "n_obstacles" => Ok(SweepVar::NObstacles),
            _ => Err(format!("unknown sweep variable `{s}`")),
        }
    }
}

/// Parses `4, 10, 20`, `1..9` (inclusive) or `4..50:2`.
pub fn parse_values(text: &str) -> Result<Vec<usize>, String> {
    let text = text.trim();
    if let Some((lo, rest)) = text.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((hi, step)) => (hi, step),
            None => (rest, "1"),
        };
        let parse = |s: &str| s.trim().parse::<usize>().map_err(|e| format!("`{s}`: {e}"));
        let (lo, hi, step) = (parse(lo)?, parse(hi)?, parse(step)?);
        if step == 0 || lo > hi {
            return Err(format!("empty range `{text}`"));
        }
        return Ok((lo..=hi).step_by(step).collect());
    }
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| format!("`{}`: {e}", s.trim()))
        })
        .collect()
}

fn parse_list<T: FromStr<Err = String>>(text: &str) -> Result<Vec<T>, String> {
    text.split(',').map(|s| s.trim().parse()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kinds: Vec<ScenarioKind>,
    pub width: usize,
    pub height: usize,
    pub sweep: SweepVar,
    pub values: Vec<usize>,
    pub n_agents: usize,
    pub gap_size: usize,
    pub n_obstacles: usize,
    pub incentive_min: u32,
    pub incentive_max: u32,
    pub trials: usize,
    pub solvers: Vec<Solver>,
    pub schedule: ScheduleRule,
    pub noise_sigma: f64,
    pub timeout_s: f64,
    pub tick_limit: Option<u32>,
    pub seed: u64,
    pub output: PathBuf,
    pub jobs: usize,
    pub bid_min: f64,
    pub bid_max: f64,
    pub bid_step: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kinds: vec![ScenarioKind::Doorway],
            width: 20,
            height: 20,
            sweep: SweepVar::NAgents,
            values: vec![4],
            n_agents: 4,
            gap_size: 1,
            n_obstacles: 0,
            incentive_min: 1,
            incentive_max: 3,
            trials: 100,
            solvers: vec![Solver::Auction],
            schedule: ScheduleRule::Harmonic,
            noise_sigma: 0.3,
            timeout_s: 20.0,
            tick_limit: None,
            seed: 0,
            output: std::env::var_os(OUT_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("results")),
            jobs: 1,
            bid_min: 0.0,
            bid_max: 15.0,
            bid_step: 0.5,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| HarnessError::Config {
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            cfg.set(key.trim(), value.trim()).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }

    /// Sets one field from its config-file spelling.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: FromStr>(v: &str) -> Result<T, String>
        where
            T::Err: fmt::Display,
        {
            v.parse().map_err(|e| format!("`{v}`: {e}"))
        }
        match key {
            "kind" | "kinds" => self.kinds = parse_list(value)?,
            "width" => self.width = num(value)?,
            "height" => self.height = num(value)?,
            "sweep" => self.sweep = value.parse()?,
            "values" => self.values = parse_values(value)?,
            "n_agents" => self.n_agents = num(value)?,
            "gap_size" => self.gap_size = num(value)?,
            "n_obstacles" => self.n_obstacles = num(value)?,
            "incentive_min" => self.incentive_min = num(value)?,
            "incentive_max" => self.incentive_max = num(value)?,
            "trials" => self.trials = num(value)?,
            "solvers" => self.solvers = parse_list(value)?,
            "schedule" => {
                self.schedule = match value {
                    "harmonic" => ScheduleRule::Harmonic,
                    "remaining-distance" => ScheduleRule::RemainingDistance,
                    _ => return Err(format!("unknown schedule `{value}`")),
                }
            }
            "noise_sigma" => self.noise_sigma = num(value)?,
            "timeout_s" => self.timeout_s = num(value)?,
            "tick_limit" => self.tick_limit = Some(num(value)?),
            "seed" => self.seed = num(value)?,
            "output" => self.output = PathBuf::from(value),
            "jobs" => self.jobs = num(value)?,
            "bid_min" => self.bid_min = num(value)?,
            "bid_max" => self.bid_max = num(value)?,
            "bid_step" => self.bid_step = num(value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Invalid(m.to_string()));
        if self.kinds.is_empty() {
            return bad("no scenario kinds");
        }
        if self.values.is_empty() {
            return bad("empty sweep range");
        }
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.solvers.is_empty() {
            return bad("no solvers");
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return bad("timeout must be positive");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative");
        }
        if self.incentive_min == 0 || self.incentive_min > self.incentive_max {
            return bad("incentive range must be nonempty with minimum at least 1");
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1");
        }
        if self.bid_step.is_nan() || self.bid_step <= 0.0 || self.bid_min > self.bid_max {
            return bad("bid grid is empty");
        }
        Ok(())
    }

    /// Scenario parameters for a sweep point.
    pub fn params(&self, kind: ScenarioKind, value: usize, seed: u64) -> ScenarioParams {
        let (mut n, mut gap, mut obstacles) = (self.n_agents, self.gap_size, self.n_obstacles);
        match self.sweep {
            SweepVar::NAgents => n = value,
            SweepVar::GapSize => gap = value,
            SweepVar::NObstacles => obstacles = value,
        }
        ScenarioParams::new(kind, self.width, self.height, n)
            .gap(gap)
            .obstacles(obstacles)
            .incentives(self.incentive_min, self.incentive_max)
            .seed(seed)
    }

    pub fn bid_grid(&self) -> Vec<f64> {
        let steps = ((self.bid_max - self.bid_min) / self.bid_step + 1e-9).floor() as usize;
        (0..=steps)
            .map(|i| self.bid_min + i as f64 * self.bid_step)
            .collect()
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Scenario seed for (kind, sweep point, trial index). Every solver sees
/// the same scenario at a given key.
pub fn scenario_seed(base: u64, kind: usize, point: usize, index: usize) -> u64 {
    mix(mix(mix(mix(base) ^ kind as u64) ^ point as u64) ^ index as u64)
}

/// Solver-side randomness (tie breaks, edge noise) for one trial.
pub fn solver_seed(scenario_seed: u64, solver: Solver) -> u64 {
    mix(scenario_seed ^ (solver as u64 + 1).wrapping_mul(0xA24B_AED4_963E_E407))
}

pub fn run_solver(
    scenario: &Scenario,
    solver: Solver,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<TrialRecord, HarnessError> {
    Ok(run_solver_trial(scenario, solver, cfg, seed)?.record)
}

/// Like [`run_solver`] but keeps the full trace.
pub fn run_solver_trial(
    scenario: &Scenario,
    solver: Solver,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<TrialRun, HarnessError> {
    let timeout = Duration::from_secs_f64(cfg.timeout_s);
    let mut limits = TrialLimits::for_scenario(scenario).with_timeout(timeout);
    if let Some(t) = cfg.tick_limit {
        limits.tick_limit = t;
    }
    let run = match solver {
        Solver::Auction => run_trial(scenario, Resolver::Auction(cfg.schedule), limits, seed),
        Solver::RandomOrdering => run_trial(scenario, Resolver::RandomOrdering, limits, seed),
        Solver::Fifo => run_trial(scenario, Resolver::Fifo, limits, seed),
        Solver::Cbs => run_cbs_trial(
            scenario,
            CbsVariant::Cbs,
            cfg.noise_sigma,
            Some(timeout),
            seed,
        )?,
        Solver::CbsRandom => run_cbs_trial(
            scenario,
            CbsVariant::CbsRandom,
            cfg.noise_sigma,
            Some(timeout),
            seed,
        )?,
    };
    Ok(run)
}

#[derive(Debug, Clone, Copy)]
struct Task {
    kind: usize,
    solver: usize,
    point: usize,
    index: usize,
}

/// Runs every (kind, solver, sweep point, trial) combination. Records come
/// back ordered by that key whatever `jobs` is.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>, HarnessError> {
    cfg.validate()?;
    let mut tasks = Vec::new();
    for kind in 0..cfg.kinds.len() {
        for solver in 0..cfg.solvers.len() {
            for point in 0..cfg.values.len() {
                for index in 0..cfg.trials {
                    tasks.push(Task {
                        kind,
                        solver,
                        point,
                        index,
                    });
                }
            }
        }
    }
    let run_task = |t: &Task| -> Result<TrialRecord, HarnessError> {
        let kind = cfg.kinds[t.kind];
        let seed = scenario_seed(cfg.seed, t.kind, t.point, t.index);
        let scenario = make_scenario(&cfg.params(kind, cfg.values[t.point], seed))?;
        let solver = cfg.solvers[t.solver];
        run_solver(&scenario, solver, cfg, solver_seed(seed, solver))
    };
    let jobs = cfg.jobs.min(tasks.len()).max(1);
    if jobs == 1 {
        return tasks.iter().map(run_task).collect();
    }
    let mut slots: Vec<Option<Result<TrialRecord, HarnessError>>> =
        (0..tasks.len()).map(|_| None).collect();
    let chunk = tasks.len().div_ceil(jobs);
    std::thread::scope(|s| {
        for (task_chunk, slot_chunk) in tasks.chunks(chunk).zip(slots.chunks_mut(chunk)) {
            s.spawn(|| {
                for (t, slot) in task_chunk.iter().zip(slot_chunk) {
                    *slot = Some(run_task(t));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|r| r.expect("every task ran"))
        .collect()
}

/// Writes `trials.csv` and `aggregates.csv` into `dir`.
pub fn write_outputs(dir: &Path, records: &[TrialRecord], by: GroupBy) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let trials = dir.join("trials.csv");
    fs::write(&trials, trials_csv(records)).map_err(io_err(&trials))?;
    let agg = dir.join("aggregates.csv");
    fs::write(&agg, aggregates_csv(&aggregate(records, by)?, by)).map_err(io_err(&agg))?;
    Ok(())
}

/// One instance's utility curves: per agent, its utility at each bid while
/// the others bid truthfully.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityCurves {
    pub values: Vec<u32>,
    /// `curves[i]` is agent `i`'s `(bid, utility)` sequence.
    pub curves: Vec<Vec<(f64, f64)>>,
}

impl UtilityCurves {
    pub fn rows(&self) -> Vec<(usize, f64, f64, f64)> {
        self.curves
            .iter()
            .enumerate()
            .flat_map(|(i, c)| {
                c.iter()
                    .map(move |&(b, u)| (i, self.values[i] as f64, b, u))
            })
            .collect()
    }
}

/// Auctions among all agents of each generated instance (kind, size and
/// incentives from the config; `n_agents` contenders), sweeping each
/// agent's bid over the configured grid.
pub fn utility_curve_instances(cfg: &ExperimentConfig) -> Result<Vec<UtilityCurves>, HarnessError> {
    cfg.validate()?;
    let grid = cfg.bid_grid();
    (0..cfg.trials)
        .map(|index| {
            let seed = scenario_seed(cfg.seed, 0, 0, index);
            let params = cfg.params(cfg.kinds[0], cfg.values[0], seed);
            let scenario = make_scenario(&params)?;
            let values = scenario.incentives();
            let contenders: Vec<Bid<f64>> = values
                .iter()
                .enumerate()
                .map(|(i, &v)| Bid::new(i, v as f64))
                .collect();
            let schedule = RewardSchedule::harmonic(contenders.len());
            let curves = (0..contenders.len())
                .map(|focal| sweep_utilities(&contenders, focal, &grid, &schedule))
                .collect::<Result<_, _>>()
                .map_err(|e| HarnessError::Invalid(e.to_string()))?;
            Ok(UtilityCurves { values, curves })
        })
        .collect()
}

/// Writes `utility_curves.csv` for the first instance.
pub fn write_utility_curves(dir: &Path, instances: &[UtilityCurves]) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("utility_curves.csv");
    let rows = instances
        .first()
        .map(UtilityCurves::rows)
        .unwrap_or_default();
    fs::write(&path, utility_curves_csv(&rows)).map_err(io_err(&path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_syntax() {
        assert_eq!(parse_values("4, 10,20").unwrap(), vec![4, 10, 20]);
        assert_eq!(parse_values("1..4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_values("4..10:3").unwrap(), vec![4, 7, 10]);
        assert!(parse_values("5..1").is_err());
        assert!(parse_values("1..5:0").is_err());
        assert!(parse_values("a").is_err());
    }

    #[test]
    fn parse_config_with_comments() {
        let cfg = ExperimentConfig::parse(
            "# sweep\nkinds = hallway, intersection\nsweep = gap_size\nvalues = 1..9:4\n\
             solvers = cbs, auction  # two\ntrials = 3\nseed = 11\noutput = out/x\n",
        )
        .unwrap();
        assert_eq!(
            cfg.kinds,
            vec![ScenarioKind::Hallway, ScenarioKind::Intersection]
        );
        assert_eq!(cfg.values, vec![1, 5, 9]);
        assert_eq!(cfg.solvers, vec![Solver::Cbs, Solver::Auction]);
        assert_eq!((cfg.trials, cfg.seed), (3, 11));
        assert_eq!(cfg.timeout_s, 20.0);
        assert_eq!(cfg.output, PathBuf::from("out/x"));
    }

    #[test]
    fn config_errors_name_the_line() {
        let err = ExperimentConfig::parse("trials = 2\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, HarnessError::Config { line: 2, .. }), "{err}");
        assert_eq!(err.exit_code(), 2);
        let err = ExperimentConfig::parse("trials = 0\n").unwrap_err();
        assert!(matches!(err, HarnessError::Invalid(_)));
        assert!(ExperimentConfig::parse("solvers = magic\n").is_err());
    }

    #[test]
    fn scenario_seed_ignores_solver_but_solver_seed_does_not() {
        let s = scenario_seed(1, 0, 2, 3);
        assert_ne!(s, scenario_seed(1, 0, 2, 4));
        assert_ne!(s, scenario_seed(1, 0, 3, 2));
        assert_ne!(
            solver_seed(s, Solver::Auction),
            solver_seed(s, Solver::RandomOrdering)
        );
    }

    #[test]
    fn bid_grid_is_inclusive() {
        let cfg = ExperimentConfig {
            bid_min: 0.0,
            bid_max: 2.0,
            bid_step: 0.5,
            ..Default::default()
        };
        assert_eq!(cfg.bid_grid(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn parallel_run_matches_serial() {
        let mut cfg = ExperimentConfig {
            kinds: vec![ScenarioKind::Doorway],
            width: 10,
            height: 10,
            values: vec![2, 4],
            trials: 3,
            solvers: vec![Solver::Auction, Solver::Fifo],
            ..Default::default()
        };
        let serial = run_experiment(&cfg).unwrap();
        cfg.jobs = 3;
        let parallel = run_experiment(&cfg).unwrap();
        let strip = |rs: &[TrialRecord]| {
            rs.iter()
                .map(|r| {
                    (
                        r.solver.clone(),
                        r.n_agents,
                        r.seed,
                        r.soc,
                        r.welfare.to_bits(),
                    )
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(serial.len(), 12);
        assert_eq!(strip(&serial), strip(&parallel));
        // Paired scenarios: both solvers see the same seeds.
        assert_eq!(serial[0].seed, serial[6].seed);
    }
}
