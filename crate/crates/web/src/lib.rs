//! Browser bindings for the demo page in `www/`.
//!
//! Each export takes a JSON request and returns a JSON response, so the
//! page needs no generated type glue. The `*_json` functions are the
//! native-testable cores; the `#[wasm_bindgen]` wrappers only convert errors.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use strategic_mapf::auction::{run_auction, sweep_utilities, Bid, RewardSchedule};
use strategic_mapf::harness::{run_solver_trial, solver_seed, ExperimentConfig, Solver};
use strategic_mapf::world::{make_scenario, Cell, ScenarioKind, ScenarioParams};

/// Largest scenario the page will simulate; CBS in particular grows fast.
const MAX_AGENTS: usize = 60;
const MAX_SIDE: usize = 40;

#[derive(Debug, Deserialize)]
#[serde(default)]
pub struct SimulateRequest {
    pub kind: String,
    pub width: usize,
    pub height: usize,
    pub agents: usize,
    pub gap: usize,
    pub obstacles: usize,
    pub incentive_max: u32,
    pub solver: String,
    pub seed: u64,
    pub timeout_s: f64,
}

impl Default for SimulateRequest {
    fn default() -> Self {
        SimulateRequest {
            kind: "doorway".into(),
            width: 16,
            height: 12,
            agents: 8,
            gap: 1,
            obstacles: 20,
            incentive_max: 3,
            solver: "auction".into(),
            seed: 1,
            timeout_s: 5.0,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct AgentView {
    pub start: Cell,
    pub goal: Cell,
    pub incentive: u32,
    pub arrival: Option<u32>,
}

#[derive(Debug, Serialize)]
pub struct SimulateResponse {
    pub width: usize,
    pub height: usize,
    pub obstacles: Vec<Cell>,
    pub agents: Vec<AgentView>,
    /// Positions per tick; frame 0 is the start.
    pub frames: Vec<Vec<Cell>>,
    pub collisions: Vec<(u32, Cell)>,
    pub auctions: usize,
    pub completed: bool,
    pub timed_out: bool,
    pub soc: u64,
    pub welfare: f64,
}

pub fn simulate_json(request: &str) -> Result<String, String> {
    let req: SimulateRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    if req.agents > MAX_AGENTS || req.width > MAX_SIDE || req.height > MAX_SIDE {
        return Err(format!(
            "demo limit is {MAX_AGENTS} agents on a {MAX_SIDE}x{MAX_SIDE} grid"
        ));
    }
    let kind: ScenarioKind = req.kind.parse()?;
    let solver: Solver = req.solver.parse()?;
    let params = ScenarioParams::new(kind, req.width, req.height, req.agents)
        .gap(req.gap)
        .obstacles(req.obstacles)
        .incentives(1, req.incentive_max.max(1))
        .seed(req.seed);
    let scenario = make_scenario(&params).map_err(|e| e.to_string())?;
    let cfg = ExperimentConfig {
        timeout_s: req.timeout_s,
        ..Default::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let run = run_solver_trial(&scenario, solver, &cfg, solver_seed(req.seed, solver))
        .map_err(|e| e.to_string())?;
    let trace = run.trace;
    let response = SimulateResponse {
        width: scenario.grid.width(),
        height: scenario.grid.height(),
        obstacles: scenario.grid.obstacles().collect(),
        agents: scenario
            .agents
            .iter()
            .zip(&trace.arrival_times)
            .map(|(a, &arrival)| AgentView {
                start: a.pos,
                goal: a.goal,
                incentive: a.incentive,
                arrival,
            })
            .collect(),
        frames: trace.configurations,
        collisions: trace.collisions.iter().map(|c| (c.tick, c.cell)).collect(),
        auctions: trace.conflicts.len(),
        completed: run.record.completed,
        timed_out: run.record.timed_out,
        soc: run.record.soc,
        welfare: run.record.welfare,
    };
    serde_json::to_string(&response).map_err(|e| e.to_string())
}

#[derive(Debug, Deserialize)]
pub struct AuctionRequest {
    pub bids: Vec<f64>,
    /// True values; the bids when omitted.
    #[serde(default)]
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
pub struct AuctionResponse {
    pub order: Vec<usize>,
    pub turns: Vec<usize>,
    pub payments: Vec<f64>,
    pub utilities: Vec<f64>,
    pub welfare: f64,
}

pub fn auction_json(request: &str) -> Result<String, String> {
    let req: AuctionRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    let values = req.values.unwrap_or_else(|| req.bids.clone());
    let bids: Vec<Bid<f64>> = req
        .bids
        .iter()
        .enumerate()
        .map(|(i, &b)| Bid::new(i, b))
        .collect();
    let out = run_auction(&bids, &values, &RewardSchedule::harmonic(bids.len()))
        .map_err(|e| e.to_string())?;
    let response = AuctionResponse {
        order: out.order,
        turns: out.turns,
        payments: out.payments,
        utilities: out.utilities,
        welfare: out.welfare,
    };
    serde_json::to_string(&response).map_err(|e| e.to_string())
}

#[derive(Debug, Deserialize)]
pub struct CurvesRequest {
    pub values: Vec<f64>,
    #[serde(default = "default_bid_max")]
    pub bid_max: f64,
    #[serde(default = "default_bid_step")]
    pub bid_step: f64,
}

fn default_bid_max() -> f64 {
    15.0
}

fn default_bid_step() -> f64 {
    0.25
}

#[derive(Debug, Serialize)]
pub struct CurvesResponse {
    pub bids: Vec<f64>,
    /// `utilities[i][j]`: agent `i`'s utility when bidding `bids[j]`.
    pub utilities: Vec<Vec<f64>>,
}

pub fn utility_curves_json(request: &str) -> Result<String, String> {
    let req: CurvesRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    if req.bid_step.is_nan()
        || req.bid_step <= 0.0
        || req.bid_max.is_nan()
        || req.bid_max < 0.0
        || req.bid_max / req.bid_step > 10_000.0
    {
        return Err("bid grid must have a positive step and at most 10000 points".into());
    }
    let steps = (req.bid_max / req.bid_step + 1e-9).floor() as usize;
    let bids: Vec<f64> = (0..=steps).map(|i| i as f64 * req.bid_step).collect();
    let contenders: Vec<Bid<f64>> = req
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| Bid::new(i, v))
        .collect();
    let schedule = RewardSchedule::harmonic(contenders.len().max(1));
    let utilities = (0..contenders.len())
        .map(|focal| {
            sweep_utilities(&contenders, focal, &bids, &schedule)
                .map(|curve| curve.into_iter().map(|(_, u)| u).collect())
                .map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    serde_json::to_string(&CurvesResponse { bids, utilities }).map_err(|e| e.to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn simulate(request: &str) -> Result<String, JsError> {
    js(simulate_json(request))
}

#[wasm_bindgen]
pub fn auction(request: &str) -> Result<String, JsError> {
    js(auction_json(request))
}

#[wasm_bindgen]
pub fn utility_curves(request: &str) -> Result<String, JsError> {
    js(utility_curves_json(request))
}
