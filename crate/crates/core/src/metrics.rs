//! Per-trial scoring, aggregation over sweep points and CSV output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::SimulationTrace;
use crate::world::{Scenario, ScenarioKind};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no trial records to aggregate")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub solver: String,
    pub kind: ScenarioKind,
    pub n_agents: usize,
    pub gap_size: usize,
    pub n_obstacles: usize,
    pub seed: u64,
    pub runtime_s: f64,
    pub completed: bool,
    pub timed_out: bool,
    pub collisions: usize,
    pub incentives: Vec<u32>,
    /// Arrival tick per agent, `None` if it never arrived.
    pub time_to_goal: Vec<Option<u32>>,
    /// Sum of arrival ticks over arrived agents.
    pub soc: u64,
    /// Sum of `incentive * arrival tick` over arrived agents.
    pub weighted_soc: u64,
    /// Sum of `incentive / arrival tick` over arrived agents.
    pub welfare: f64,
    pub utilities: Vec<f64>,
    pub total_payments: f64,
}

pub fn score_trial(
    trace: &SimulationTrace,
    scenario: &Scenario,
    runtime: Duration,
    solver: &str,
) -> TrialRecord {
    let incentives = scenario.incentives();
    let mut soc = 0u64;
    let mut weighted_soc = 0u64;
    let mut welfare = 0.0;
    for (t, v) in trace.arrival_times.iter().zip(&incentives) {
        if let Some(t) = *t {
            soc += t as u64;
            weighted_soc += *v as u64 * t as u64;
            if t > 0 {
                welfare += *v as f64 / t as f64;
            }
        }
    }
    TrialRecord {
        solver: solver.to_string(),
        kind: scenario.kind,
        n_agents: scenario.n_agents(),
        gap_size: scenario.gap_size,
        n_obstacles: scenario.n_obstacles(),
        seed: scenario.rng_seed,
        runtime_s: runtime.as_secs_f64(),
        completed: trace.completed,
        timed_out: trace.timed_out,
        collisions: trace.collisions.len(),
        incentives,
        time_to_goal: trace.arrival_times.clone(),
        soc,
        weighted_soc,
        welfare,
        utilities: trace.utilities.clone(),
        total_payments: trace.payments.iter().sum(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupBy {
    NAgents,
    GapSize,
    NObstacles,
}

impl GroupBy {
    pub fn column(&self) -> &'static str {
        match self {
            GroupBy::NAgents => "n_agents",
            GroupBy::GapSize => "gap_size",
            GroupBy::NObstacles => "n_obstacles",
        }
    }

    fn key(&self, r: &TrialRecord) -> usize {
        match self {
            GroupBy::NAgents => r.n_agents,
            GroupBy::GapSize => r.gap_size,
            GroupBy::NObstacles => r.n_obstacles,
        }
    }
}

/// Mean, sample standard deviation and 95% normal-approximation half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub ci95: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Summary {
            mean,
            std,
            ci95: 1.96 * std / n.sqrt(),
        }
    }
}

pub const AGGREGATE_METRICS: [&str; 6] = [
    "runtime_s",
    "completed",
    "collisions",
    "soc",
    "weighted_soc",
    "welfare",
];

fn metric(r: &TrialRecord, name: &str) -> f64 {
    match name {
        "runtime_s" => r.runtime_s,
        "completed" => r.completed as u8 as f64,
        "collisions" => r.collisions as f64,
        "soc" => r.soc as f64,
        "weighted_soc" => r.weighted_soc as f64,
        "welfare" => r.welfare,
        _ => unreachable!("unknown metric {name}"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub solver: String,
    pub kind: ScenarioKind,
    pub group: usize,
    pub trials: usize,
    /// Aligned with [`AGGREGATE_METRICS`].
    pub metrics: Vec<Summary>,
}

impl AggregateRow {
    pub fn get(&self, name: &str) -> Option<Summary> {
        AGGREGATE_METRICS
            .iter()
            .position(|m| *m == name)
            .map(|i| self.metrics[i])
    }
}

/// One row per (solver, kind, group value), in sorted order.
pub fn aggregate(records: &[TrialRecord], by: GroupBy) -> Result<Vec<AggregateRow>, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut groups: BTreeMap<(String, &str, usize), Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.solver.clone(), r.kind.as_str(), by.key(r)))
            .or_default()
            .push(r);
    }
    Ok(groups
        .into_iter()
        .map(|((solver, _, group), rs)| AggregateRow {
            solver,
            kind: rs[0].kind,
            group,
            trials: rs.len(),
            metrics: AGGREGATE_METRICS
                .iter()
                .map(|m| Summary::of(&rs.iter().map(|r| metric(r, m)).collect::<Vec<_>>()))
                .collect(),
        })
        .collect())
}

pub const TRIALS_HEADER: &str =
    "solver,kind,n_agents,gap_size,n_obstacles,seed,runtime_s,completed,collisions,soc,weighted_soc,welfare";

pub fn trials_csv(records: &[TrialRecord]) -> String {
    let mut out = format!("{TRIALS_HEADER}\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{:.6},{},{},{},{},{:.6}",
            r.solver,
            r.kind,
            r.n_agents,
            r.gap_size,
            r.n_obstacles,
            r.seed,
            r.runtime_s,
            r.completed as u8,
            r.collisions,
            r.soc,
            r.weighted_soc,
            r.welfare
        )
        .unwrap();
    }
    out
}

pub fn aggregates_csv(rows: &[AggregateRow], by: GroupBy) -> String {
    let mut out = format!("solver,kind,{},trials", by.column());
    for m in AGGREGATE_METRICS {
        write!(out, ",{m}_mean,{m}_std,{m}_ci95").unwrap();
    }
    out.push('\n');
    for row in rows {
        write!(
            out,
            "{},{},{},{}",
            row.solver, row.kind, row.group, row.trials
        )
        .unwrap();
        for s in &row.metrics {
            write!(out, ",{:.6},{:.6},{:.6}", s.mean, s.std, s.ci95).unwrap();
        }
        out.push('\n');
    }
    out
}

/// `(agent_id, true_value, bid, utility)` rows.
pub fn utility_curves_csv(rows: &[(usize, f64, f64, f64)]) -> String {
    let mut out = String::from("agent_id,true_value,bid,utility\n");
    for (id, v, b, u) in rows {
        writeln!(out, "{id},{v},{b},{u:.6}").unwrap();
    }
    out
}
