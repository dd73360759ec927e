//! Conflict-Based Search baseline with noisy edge costs, and multi-hop
//! execution of its unit-step plans.
//!
//! Edge costs are drawn once per trial as `max(0.01, 1 + N(0, sigma^2))` per
//! undirected grid edge; waiting costs 1. The high level is best-first over
//! the constraint tree by summed path cost, splitting on the earliest vertex
//! or edge conflict. `Cbs` pops equal-cost nodes in insertion order,
//! `CbsRandom` in random order.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::rc::Rc;
use std::time::Duration;

use ordered_float::OrderedFloat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use web_time::Instant;

use crate::metrics::score_trial;
use crate::planner::{Collision, SimulationTrace, StepRecord, Sweep, TrialRun};
use crate::world::{Cell, Direction, GridWorld, MoveAction, Scenario};

/// Low-level open-list key: (f, h, insertion counter, node index).
type OpenKey = (OrderedFloat<f64>, OrderedFloat<f64>, u64, usize);

pub const MIN_EDGE_COST: f64 = 0.01;
pub const WAIT_COST: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CbsError {
    #[error("noise sigma must be finite and non-negative, got {0}")]
    InvalidSigma(f64),
    #[error("agent {0} cannot reach its goal")]
    NoPath(usize),
    #[error("no conflict-free plan exists")]
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CbsVariant {
    Cbs,
    CbsRandom,
}

impl CbsVariant {
    pub fn label(&self) -> &'static str {
        match self {
            CbsVariant::Cbs => "cbs",
            CbsVariant::CbsRandom => "cbs-random",
        }
    }
}

/// Per-edge traversal costs for one trial, symmetric in direction.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeCosts {
    width: usize,
    right: Vec<f64>,
    down: Vec<f64>,
    min: f64,
}

impl EdgeCosts {
    /// Samples every in-bounds edge in row-major order: the edge to the
    /// right of a cell, then the edge below it.
    pub fn sample(grid: &GridWorld, sigma: f64, rng: &mut impl Rng) -> Result<Self, CbsError> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(CbsError::InvalidSigma(sigma));
        }
        let (w, h) = (grid.width(), grid.height());
        let noise = Normal::new(0.0, sigma).map_err(|_| CbsError::InvalidSigma(sigma))?;
        let draw = |rng: &mut dyn rand::RngCore| {
            if sigma == 0.0 {
                1.0
            } else {
                (1.0 + noise.sample(rng)).max(MIN_EDGE_COST)
            }
        };
        let mut right = vec![f64::INFINITY; w * h];
        let mut down = vec![f64::INFINITY; w * h];
        for r in 0..h {
            for c in 0..w {
                if c + 1 < w {
                    right[r * w + c] = draw(rng);
                }
                if r + 1 < h {
                    down[r * w + c] = draw(rng);
                }
            }
        }
        let min = right.iter().chain(&down).copied().fold(WAIT_COST, f64::min);
        Ok(EdgeCosts {
            width: w,
            right,
            down,
            min,
        })
    }

    pub fn unit(grid: &GridWorld) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Self::sample(grid, 0.0, &mut rng).expect("zero sigma is valid")
    }

    /// Cost of moving between 4-adjacent cells, or of waiting in place.
    pub fn cost(&self, from: Cell, to: Cell) -> f64 {
        if from == to {
            return WAIT_COST;
        }
        let a = from.min(to);
        let b = from.max(to);
        let idx = a.row as usize * self.width + a.col as usize;
        if b.row == a.row {
            self.right[idx]
        } else {
            self.down[idx]
        }
    }

    /// Smallest cost of any step, waits included.
    pub fn min_cost(&self) -> f64 {
        self.min
    }

    pub fn path_cost(&self, path: &[Cell]) -> f64 {
        path.windows(2).map(|w| self.cost(w[0], w[1])).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Constraint {
    /// `agent` may not be at `cell` at `tick`.
    Vertex { agent: usize, cell: Cell, tick: u32 },
    /// `agent` may not move `from -> to` arriving at `tick`.
    Edge {
        agent: usize,
        from: Cell,
        to: Cell,
        tick: u32,
    },
}

impl Constraint {
    pub fn agent(&self) -> usize {
        match *self {
            Constraint::Vertex { agent, .. } | Constraint::Edge { agent, .. } => agent,
        }
    }
}

#[derive(Debug)]
struct ConstraintLink {
    constraint: Constraint,
    parent: Option<Rc<ConstraintLink>>,
}

#[derive(Debug, Default)]
struct AgentConstraints {
    vertex: HashSet<(Cell, u32)>,
    edge: HashSet<(Cell, Cell, u32)>,
    /// Last tick at which the goal is forbidden, if any.
    goal_block: Option<u32>,
    max_tick: u32,
}

impl AgentConstraints {
    fn collect(chain: &Option<Rc<ConstraintLink>>, agent: usize, goal: Cell) -> Self {
        let mut out = AgentConstraints::default();
        let mut link = chain.as_ref();
        while let Some(l) = link {
            match l.constraint {
                Constraint::Vertex {
                    agent: a,
                    cell,
                    tick,
                } if a == agent => {
                    out.vertex.insert((cell, tick));
                    out.max_tick = out.max_tick.max(tick);
                    if cell == goal {
                        out.goal_block = Some(out.goal_block.map_or(tick, |t| t.max(tick)));
                    }
                }
                Constraint::Edge {
                    agent: a,
                    from,
                    to,
                    tick,
                } if a == agent => {
                    out.edge.insert((from, to, tick));
                    out.max_tick = out.max_tick.max(tick);
                }
                _ => {}
            }
            link = l.parent.as_ref();
        }
        out
    }
}

struct Deadline {
    start: Instant,
    limit: Option<Duration>,
}

impl Deadline {
    fn expired(&self) -> bool {
        self.limit.is_some_and(|l| self.start.elapsed() > l)
    }
}

/// Space-time A* for one agent under its constraints. `None` means no path
/// exists within the horizon, or the deadline passed.
fn low_level(
    grid: &GridWorld,
    costs: &EdgeCosts,
    start: Cell,
    goal: Cell,
    cons: &AgentConstraints,
    deadline: &Deadline,
) -> Option<Vec<Cell>> {
    if cons.vertex.contains(&(start, 0)) {
        return None;
    }
    let horizon = cons.max_tick + (grid.width() * grid.height()) as u32 + 1;
    let h = |c: Cell| costs.min_cost() * c.manhattan(goal) as f64;
    let mut open: BinaryHeap<Reverse<OpenKey>> = BinaryHeap::new();
    // Arena of (cell, tick, g, parent).
    let mut nodes: Vec<(Cell, u32, f64, usize)> = vec![(start, 0, 0.0, usize::MAX)];
    let mut best: HashMap<(Cell, u32), f64> = HashMap::new();
    best.insert((start, 0), 0.0);
    let mut counter = 0u64;
    open.push(Reverse((
        OrderedFloat(h(start)),
        OrderedFloat(h(start)),
        0,
        0,
    )));
    let mut expansions = 0u32;
    while let Some(Reverse((_, _, _, idx))) = open.pop() {
        let (cell, t, g, _) = nodes[idx];
        if best.get(&(cell, t)).is_some_and(|b| *b < g) {
            continue;
        }
        if cell == goal && cons.goal_block.is_none_or(|b| t > b) {
            let mut path = Vec::with_capacity(t as usize + 1);
            let mut i = idx;
            while i != usize::MAX {
                path.push(nodes[i].0);
                i = nodes[i].3;
            }
            path.reverse();
            return Some(path);
        }
        expansions += 1;
        if expansions.is_multiple_of(1024) && deadline.expired() {
            return None;
        }
        if t >= horizon {
            continue;
        }
        let next_t = t + 1;
        let moves = Direction::MOVES
            .into_iter()
            .map(|d| cell.offset(d, 1))
            .filter(|c| grid.is_free(*c))
            .chain(std::iter::once(cell));
        for next in moves {
            if cons.vertex.contains(&(next, next_t)) || cons.edge.contains(&(cell, next, next_t)) {
                continue;
            }
            let ng = g + costs.cost(cell, next);
            if best.get(&(next, next_t)).is_some_and(|b| *b <= ng) {
                continue;
            }
            best.insert((next, next_t), ng);
            nodes.push((next, next_t, ng, idx));
            counter += 1;
            let hn = h(next);
            open.push(Reverse((
                OrderedFloat(ng + hn),
                OrderedFloat(hn),
                counter,
                nodes.len() - 1,
            )));
        }
    }
    None
}

fn at(path: &[Cell], t: usize) -> Cell {
    path[t.min(path.len() - 1)]
}

/// Earliest conflict among unit-step paths (agents rest at their goal after
/// arriving): vertex conflicts at tick `t` are reported before edge
/// conflicts on the move into `t`.
pub fn first_conflict(paths: &[Rc<Vec<Cell>>]) -> Option<(Constraint, Constraint)> {
    let horizon = paths.iter().map(|p| p.len()).max().unwrap_or(0);
    for t in 0..horizon {
        let mut seen: HashMap<Cell, usize> = HashMap::new();
        for (i, p) in paths.iter().enumerate() {
            let c = at(p, t);
            if let Some(&j) = seen.get(&c) {
                let tick = t as u32;
                return Some((
                    Constraint::Vertex {
                        agent: j,
                        cell: c,
                        tick,
                    },
                    Constraint::Vertex {
                        agent: i,
                        cell: c,
                        tick,
                    },
                ));
            }
            seen.insert(c, i);
        }
        if t == 0 {
            continue;
        }
        for i in 0..paths.len() {
            for j in i + 1..paths.len() {
                let (a0, a1) = (at(&paths[i], t - 1), at(&paths[i], t));
                let (b0, b1) = (at(&paths[j], t - 1), at(&paths[j], t));
                if a0 != a1 && a0 == b1 && a1 == b0 {
                    let tick = t as u32;
                    return Some((
                        Constraint::Edge {
                            agent: i,
                            from: a0,
                            to: a1,
                            tick,
                        },
                        Constraint::Edge {
                            agent: j,
                            from: b0,
                            to: b1,
                            tick,
                        },
                    ));
                }
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct CbsPlan {
    /// Unit-step paths from start to goal; index `t` is the cell at tick `t`.
    pub paths: Vec<Vec<Cell>>,
    /// Summed path cost under the trial's edge costs.
    pub cost: f64,
    pub expanded: usize,
    pub elapsed: Duration,
}

impl CbsPlan {
    /// Sum over agents of the tick each path reaches its goal.
    pub fn sum_of_arrivals(&self) -> usize {
        self.paths.iter().map(|p| p.len() - 1).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CbsOutcome {
    Solved(CbsPlan),
    TimedOut { elapsed: Duration, expanded: usize },
}

struct CtNode {
    constraints: Option<Rc<ConstraintLink>>,
    paths: Vec<Rc<Vec<Cell>>>,
    costs: Vec<f64>,
}

/// Plans with CBS under edge costs sampled from `rng_seed`.
pub fn plan_cbs(
    scenario: &Scenario,
    noise_sigma: f64,
    variant: CbsVariant,
    rng_seed: u64,
    timeout: Option<Duration>,
) -> Result<CbsOutcome, CbsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let costs = EdgeCosts::sample(&scenario.grid, noise_sigma, &mut rng)?;
    plan_cbs_with(scenario, &costs, variant, &mut rng, timeout)
}

/// [`plan_cbs`] with explicit edge costs; `rng` only breaks ties for
/// [`CbsVariant::CbsRandom`].
pub fn plan_cbs_with(
    scenario: &Scenario,
    costs: &EdgeCosts,
    variant: CbsVariant,
    rng: &mut impl Rng,
    timeout: Option<Duration>,
) -> Result<CbsOutcome, CbsError> {
    let deadline = Deadline {
        start: Instant::now(),
        limit: timeout,
    };
    let grid = &scenario.grid;
    let agents = &scenario.agents;
    let timed_out = |expanded| {
        Ok(CbsOutcome::TimedOut {
            elapsed: deadline.start.elapsed(),
            expanded,
        })
    };

    let mut root_paths = Vec::with_capacity(agents.len());
    let mut root_costs = Vec::with_capacity(agents.len());
    for a in agents {
        let cons = AgentConstraints::default();
        match low_level(grid, costs, a.pos, a.goal, &cons, &deadline) {
            Some(p) => {
                root_costs.push(costs.path_cost(&p));
                root_paths.push(Rc::new(p));
            }
            None if deadline.expired() => return timed_out(0),
            None => return Err(CbsError::NoPath(a.id)),
        }
    }

    let mut arena: Vec<CtNode> = Vec::new();
    let mut open: BinaryHeap<Reverse<(OrderedFloat<f64>, u64, usize)>> = BinaryHeap::new();
    let mut counter = 0u64;
    let mut tiebreak = |rng: &mut dyn rand::RngCore| {
        counter += 1;
        match variant {
            CbsVariant::Cbs => counter,
            CbsVariant::CbsRandom => rng.next_u64(),
        }
    };
    let total = |c: &[f64]| c.iter().sum::<f64>();
    open.push(Reverse((
        OrderedFloat(total(&root_costs)),
        tiebreak(rng),
        0,
    )));
    arena.push(CtNode {
        constraints: None,
        paths: root_paths,
        costs: root_costs,
    });

    let mut expanded = 0usize;
    while let Some(Reverse((_, _, idx))) = open.pop() {
        if deadline.expired() {
            return timed_out(expanded);
        }
        expanded += 1;
        let Some((c1, c2)) = first_conflict(&arena[idx].paths) else {
            let node = &arena[idx];
            return Ok(CbsOutcome::Solved(CbsPlan {
                paths: node.paths.iter().map(|p| p.as_ref().clone()).collect(),
                cost: total(&node.costs),
                expanded,
                elapsed: deadline.start.elapsed(),
            }));
        };
        for constraint in [c1, c2] {
            let agent = constraint.agent();
            let chain = Some(Rc::new(ConstraintLink {
                constraint,
                parent: arena[idx].constraints.clone(),
            }));
            let a = &agents[agent];
            let cons = AgentConstraints::collect(&chain, agent, a.goal);
            let Some(path) = low_level(grid, costs, a.pos, a.goal, &cons, &deadline) else {
                if deadline.expired() {
                    return timed_out(expanded);
                }
                continue;
            };
            let mut paths = arena[idx].paths.clone();
            let mut node_costs = arena[idx].costs.clone();
            node_costs[agent] = costs.path_cost(&path);
            paths[agent] = Rc::new(path);
            let key = OrderedFloat(total(&node_costs));
            arena.push(CtNode {
                constraints: chain,
                paths,
                costs: node_costs,
            });
            open.push(Reverse((key, tiebreak(rng), arena.len() - 1)));
        }
        // Expanded nodes are never revisited; drop their paths early.
        arena[idx].paths = Vec::new();
    }
    Err(CbsError::Infeasible)
}

fn heading(from: Cell, to: Cell) -> Direction {
    match (to.row - from.row, to.col - from.col) {
        (r, _) if r < 0 => Direction::Up,
        (r, _) if r > 0 => Direction::Down,
        (_, c) if c < 0 => Direction::Left,
        _ => Direction::Right,
    }
}

/// Executes unit-step paths letting agent `i` advance up to `incentives[i]`
/// waypoints per tick (waits count as waypoints). Collisions are recorded
/// but not prevented; arrived agents leave the grid.
pub fn execute_multihop(paths: &[Vec<Cell>], incentives: &[u32]) -> SimulationTrace {
    let n = paths.len();
    let mut idx = vec![0usize; n];
    let mut trace = SimulationTrace {
        configurations: vec![paths.iter().map(|p| p[0]).collect()],
        steps: Vec::new(),
        conflicts: Vec::new(),
        collisions: Vec::new(),
        arrival_times: vec![None; n],
        payments: vec![0.0; n],
        utilities: vec![0.0; n],
        completed: false,
        timed_out: false,
    };
    for (i, p) in paths.iter().enumerate() {
        if p.len() == 1 {
            trace.arrival_times[i] = Some(0);
        }
    }
    let mut tick = 0u32;
    while trace.arrival_times.iter().any(Option::is_none) {
        let active: Vec<usize> = (0..n)
            .filter(|&i| trace.arrival_times[i].is_none())
            .collect();
        let sweeps: Vec<Sweep> = active
            .iter()
            .map(|&i| {
                let hop = (incentives[i].max(1) as usize).min(paths[i].len() - 1 - idx[i]);
                Sweep::along(paths[i][idx[i]], &paths[i][idx[i] + 1..=idx[i] + hop])
            })
            .collect();
        for x in 0..active.len() {
            for y in x + 1..active.len() {
                let (a, b) = (&sweeps[x], &sweeps[y]);
                if a.collides(b) {
                    let cell = a
                        .shared_cells(b)
                        .first()
                        .copied()
                        .unwrap_or(a.start.min(b.start));
                    trace.collisions.push(Collision {
                        tick,
                        cell,
                        agents: [active[x], active[y]],
                    });
                }
            }
        }
        for (k, &i) in active.iter().enumerate() {
            let hop = (incentives[i].max(1) as usize).min(paths[i].len() - 1 - idx[i]);
            idx[i] += hop;
            let sweep = &sweeps[k];
            let action = match sweep.entered.first() {
                None => MoveAction::WAIT,
                Some(&first) => {
                    MoveAction::new(heading(sweep.start, first), sweep.entered.len() as u32)
                }
            };
            trace.steps.push(StepRecord {
                tick,
                agent: i,
                from: sweep.start,
                to: sweep.end(),
                action,
                waiting: action.is_wait(),
                yielded: false,
            });
            if idx[i] == paths[i].len() - 1 {
                trace.arrival_times[i] = Some(tick + 1);
            }
        }
        trace
            .configurations
            .push((0..n).map(|i| paths[i][idx[i]]).collect());
        tick += 1;
    }
    trace.completed = true;
    trace
}

/// Plans with CBS, then executes multi-hop with the agents' incentives.
/// A timeout yields an incomplete trace with no arrivals.
pub fn run_cbs_trial(
    scenario: &Scenario,
    variant: CbsVariant,
    noise_sigma: f64,
    timeout: Option<Duration>,
    seed: u64,
) -> Result<TrialRun, CbsError> {
    let started = Instant::now();
    let trace = match plan_cbs(scenario, noise_sigma, variant, seed, timeout)? {
        CbsOutcome::Solved(plan) => execute_multihop(&plan.paths, &scenario.incentives()),
        CbsOutcome::TimedOut { .. } => {
            let mut t = SimulationTrace::new(&scenario.agents);
            t.timed_out = true;
            t
        }
    };
    let record = score_trial(&trace, scenario, started.elapsed(), variant.label());
    Ok(TrialRun { trace, record })
}
