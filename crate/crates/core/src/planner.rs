//! One-step look-ahead motion planner on potential maps, with auction-based
//! (or baseline) resolution of conflicts over shared cells.
//!
//! Each tick:
//!
//! 1. agents whose turn has come are released from their orderings;
//! 2. every free agent proposes the longest straight descent on its
//!    potential map that does not enter an occupied cell;
//! 3. agents cutting through a cell with an active ordering force a fresh
//!    resolution among the still-waiting members and the newcomers;
//! 4. overlapping sweeps are grouped into conflicts, contenders with an
//!    equally good non-conflicting alternative are reassigned, and the rest
//!    are resolved into turn orderings (turn `q` moves `q - 1` ticks later);
//! 5. agents stuck with no descent at all may push a lower-ranked blocker one
//!    cell aside, reserving the vacated cell for themselves;
//! 6. moves are executed and any shared cell is logged as a collision.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use web_time::Instant;

use crate::auction::{run_auction, Bid, RewardSchedule};
use crate::metrics::{score_trial, TrialRecord};
use crate::potential::{PotentialMap, PotentialSet};
use crate::world::{AgentState, Cell, Direction, GridWorld, MoveAction, Scenario};

/// Consecutive stuck ticks before an agent may push a blocker aside.
pub const YIELD_PATIENCE: u32 = 2;
/// Ticks a cell vacated by a push stays reserved for the pusher.
pub const RESERVATION_TICKS: u32 = 3;
/// Depth of recursive pushes along a chain of blockers.
const MAX_PUSH_DEPTH: usize = 64;

/// Cells an agent occupies during one tick: `entered` lists the cells it
/// moves into, in order. Empty `entered` means it stays at `start`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sweep {
    pub start: Cell,
    pub entered: Vec<Cell>,
}

impl Sweep {
    pub fn stationary(at: Cell) -> Self {
        Sweep {
            start: at,
            entered: Vec::new(),
        }
    }

    pub fn straight(start: Cell, action: MoveAction) -> Self {
        let entered = (1..=action.step as i32)
            .map(|k| start.offset(action.direction, k))
            .collect();
        Sweep { start, entered }
    }

    /// Sweep along consecutive waypoints; repeated cells (waits) are skipped.
    pub fn along(start: Cell, waypoints: &[Cell]) -> Self {
        let mut entered: Vec<Cell> = Vec::with_capacity(waypoints.len());
        let mut last = start;
        for &w in waypoints {
            if w != last {
                entered.push(w);
                last = w;
            }
        }
        Sweep { start, entered }
    }

    pub fn is_moving(&self) -> bool {
        !self.entered.is_empty()
    }

    pub fn end(&self) -> Cell {
        self.entered.last().copied().unwrap_or(self.start)
    }

    /// Cells held during the tick: the entered cells, or the start cell for
    /// a stationary agent.
    pub fn footprint(&self) -> &[Cell] {
        if self.entered.is_empty() {
            std::slice::from_ref(&self.start)
        } else {
            &self.entered
        }
    }

    pub fn shared_cells(&self, other: &Sweep) -> Vec<Cell> {
        let theirs = other.footprint();
        self.footprint()
            .iter()
            .copied()
            .filter(|c| theirs.contains(c))
            .collect()
    }

    /// Two sweeps collide when their footprints share a cell or when the
    /// agents pass through each other (each enters the other's start).
    /// Entering a cell its occupant leaves in the same tick is allowed.
    pub fn collides(&self, other: &Sweep) -> bool {
        if !self.shared_cells(other).is_empty() {
            return true;
        }
        self.is_moving()
            && other.is_moving()
            && self.entered.contains(&other.start)
            && other.entered.contains(&self.start)
    }
}

/// A descending move candidate and where it ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub action: MoveAction,
    pub end: Cell,
    pub end_potential: u32,
}

/// Every straight move (all prefixes) along which the potential strictly
/// decreases cell by cell and no cell is an obstacle or `blocked`.
pub fn descending_moves(
    grid: &GridWorld,
    potential: &PotentialMap,
    agent: &AgentState,
    blocked: impl Fn(Cell) -> bool,
) -> Vec<Candidate> {
    let mut out = Vec::new();
    let Some(here) = potential.get(agent.pos) else {
        return out;
    };
    for dir in Direction::MOVES {
        let mut prev = here;
        for step in 1..=agent.incentive {
            let cell = agent.pos.offset(dir, step as i32);
            if !grid.is_free(cell) || blocked(cell) {
                break;
            }
            match potential.get(cell) {
                Some(p) if p < prev => {
                    out.push(Candidate {
                        action: MoveAction::new(dir, step),
                        end: cell,
                        end_potential: p,
                    });
                    prev = p;
                }
                _ => break,
            }
        }
    }
    out
}

/// Picks the deepest descent; equal descents prefer the axis with more
/// remaining distance to the goal, then the vertical axis, then up/left.
fn choose_move(agent: &AgentState, candidates: &[Candidate]) -> MoveAction {
    let remaining = |dir: Direction| {
        if dir.is_vertical() {
            agent.goal.row.abs_diff(agent.pos.row)
        } else {
            agent.goal.col.abs_diff(agent.pos.col)
        }
    };
    candidates
        .iter()
        .min_by(|a, b| {
            a.end_potential
                .cmp(&b.end_potential)
                .then_with(|| remaining(b.action.direction).cmp(&remaining(a.action.direction)))
                .then_with(|| {
                    b.action
                        .direction
                        .is_vertical()
                        .cmp(&a.action.direction.is_vertical())
                })
                .then_with(|| a.action.direction.cmp(&b.action.direction))
        })
        .map_or(MoveAction::WAIT, |c| c.action)
}

fn occupied_cells(agents: &[AgentState]) -> HashSet<Cell> {
    agents
        .iter()
        .filter(|a| !a.arrived)
        .map(|a| a.pos)
        .collect()
}

/// Proposes one action per agent in `active`: the longest descent on its
/// potential map that avoids cells occupied by other unarrived agents, or a
/// wait when every descending neighbor is taken.
pub fn propose_moves(
    grid: &GridWorld,
    potentials: &PotentialSet,
    agents: &[AgentState],
    active: &[usize],
) -> BTreeMap<usize, MoveAction> {
    let occupied = occupied_cells(agents);
    active
        .iter()
        .map(|&id| {
            let agent = &agents[id];
            let cands = descending_moves(grid, potentials.for_agent(agent), agent, |c| {
                occupied.contains(&c)
            });
            (id, choose_move(agent, &cands))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conflict {
    pub cell: Cell,
    pub time: u32,
    pub contenders: BTreeSet<usize>,
}

fn sweeps_of(
    agents: &[AgentState],
    proposals: &BTreeMap<usize, MoveAction>,
) -> BTreeMap<usize, Sweep> {
    proposals
        .iter()
        .map(|(&id, &a)| (id, Sweep::straight(agents[id].pos, a)))
        .collect()
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Groups agents whose same-tick sweeps collide; groups are closed under
/// shared cells, so every agent is in at most one conflict.
pub fn detect_conflicts(
    agents: &[AgentState],
    proposals: &BTreeMap<usize, MoveAction>,
    tick: u32,
) -> Vec<Conflict> {
    let sweeps: Vec<(usize, Sweep)> = sweeps_of(agents, proposals).into_iter().collect();
    let n = sweeps.len();
    let mut parent: Vec<usize> = (0..n).collect();
    let mut shared: Vec<(usize, Vec<Cell>)> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&sweeps[i].1, &sweeps[j].1);
            if a.collides(b) {
                let mut cells = a.shared_cells(b);
                if cells.is_empty() {
                    // Pass-through swap: attribute it to the smaller start.
                    cells.push(a.start.min(b.start));
                }
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri] = rj;
                shared.push((i, cells));
            }
        }
    }
    let mut groups: BTreeMap<usize, (BTreeSet<usize>, BTreeMap<Cell, usize>)> = BTreeMap::new();
    for (i, sweep) in sweeps.iter().enumerate().take(n) {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().0.insert(sweep.0);
    }
    for (i, cells) in shared {
        let root = find(&mut parent, i);
        let counts = &mut groups.get_mut(&root).unwrap().1;
        for c in cells {
            *counts.entry(c).or_default() += 1;
        }
    }
    let mut conflicts: Vec<Conflict> = groups
        .into_values()
        .filter(|(members, _)| members.len() >= 2)
        .map(|(contenders, counts)| {
            let cell = counts
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(c, _)| *c)
                .expect("colliding group has a shared cell");
            Conflict {
                cell,
                time: tick,
                contenders,
            }
        })
        .collect();
    conflicts.sort_by_key(|c| *c.contenders.iter().next().unwrap());
    conflicts
}

/// Moves contenders (lowest id first) onto an alternative descent of equal
/// depth that collides with no other proposal, until fewer than two remain.
/// Returns the residual conflict; `proposals` is updated in place.
pub fn try_reassign(
    conflict: &Conflict,
    proposals: &mut BTreeMap<usize, MoveAction>,
    agents: &[AgentState],
    grid: &GridWorld,
    potentials: &PotentialSet,
) -> Conflict {
    let occupied = occupied_cells(agents);
    reassign_with(conflict, proposals, agents, grid, potentials, |_, c| {
        occupied.contains(&c)
    })
}

fn reassign_with(
    conflict: &Conflict,
    proposals: &mut BTreeMap<usize, MoveAction>,
    agents: &[AgentState],
    grid: &GridWorld,
    potentials: &PotentialSet,
    blocked: impl Fn(usize, Cell) -> bool,
) -> Conflict {
    let mut residual = conflict.clone();
    for &id in &conflict.contenders {
        if residual.contenders.len() < 2 {
            break;
        }
        let agent = &agents[id];
        let current = proposals[&id];
        if current.is_wait() {
            continue;
        }
        let potential = potentials.for_agent(agent);
        let target = potential
            .get(Sweep::straight(agent.pos, current).end())
            .expect("proposal ends on a reachable cell");
        let others: Vec<Sweep> = proposals
            .iter()
            .filter(|(other, _)| **other != id)
            .map(|(&other, &a)| Sweep::straight(agents[other].pos, a))
            .collect();
        let alternative = descending_moves(grid, potential, agent, |c| blocked(id, c))
            .into_iter()
            .filter(|c| c.end_potential == target && c.action != current)
            .find(|c| {
                let sweep = Sweep::straight(agent.pos, c.action);
                others.iter().all(|o| !sweep.collides(o))
            });
        if let Some(alt) = alternative {
            proposals.insert(id, alt.action);
            residual.contenders.remove(&id);
        }
    }
    residual
}

/// Reward schedule used inside auctions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleRule {
    /// `alpha_q = 1 / q`.
    Harmonic,
    /// `alpha_q = 1 / (d + q - 1)` with `d` the winner's remaining potential.
    RemainingDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resolver {
    /// Truthful bids, turn-order auction.
    Auction(ScheduleRule),
    /// Uniformly random turn order.
    RandomOrdering,
    /// First come first served: conflict arrival tick, then id.
    Fifo,
}

impl Resolver {
    pub fn label(&self) -> &'static str {
        match self {
            Resolver::Auction(_) => "auction",
            Resolver::RandomOrdering => "random-ordering",
            Resolver::Fifo => "fifo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialLimits {
    pub tick_limit: u32,
    pub timeout: Option<Duration>,
}

impl TrialLimits {
    /// `4 * (width + height) * n_agents` ticks, no wall-clock limit.
    pub fn for_scenario(scenario: &Scenario) -> Self {
        let span = scenario.grid.width() + scenario.grid.height();
        TrialLimits {
            tick_limit: (4 * span * scenario.n_agents()).max(1) as u32,
            timeout: None,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = Some(timeout);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub tick: u32,
    pub agent: usize,
    pub from: Cell,
    pub to: Cell,
    pub action: MoveAction,
    /// Held back by an ordering or with nowhere to descend.
    pub waiting: bool,
    /// A sideways or backward step made to let a higher-ranked agent by.
    pub yielded: bool,
}

/// One resolved conflict: contenders, their bids, turns (σ), payments and
/// utilities, aligned by position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictRecord {
    pub tick: u32,
    pub cell: Cell,
    pub contenders: Vec<usize>,
    pub bids: Vec<f64>,
    pub turns: Vec<usize>,
    pub payments: Vec<f64>,
    pub utilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Collision {
    pub tick: u32,
    pub cell: Cell,
    pub agents: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    /// Positions of every agent, one entry per tick boundary; entry 0 is the
    /// initial configuration. Arrived agents stay listed at their goal.
    pub configurations: Vec<Vec<Cell>>,
    pub steps: Vec<StepRecord>,
    pub conflicts: Vec<ConflictRecord>,
    pub collisions: Vec<Collision>,
    pub arrival_times: Vec<Option<u32>>,
    /// Accumulated auction payments and utilities per agent.
    pub payments: Vec<f64>,
    pub utilities: Vec<f64>,
    pub completed: bool,
    pub timed_out: bool,
}

impl SimulationTrace {
    pub fn new(agents: &[AgentState]) -> Self {
        SimulationTrace {
            configurations: vec![agents.iter().map(|a| a.pos).collect()],
            steps: Vec::new(),
            conflicts: Vec::new(),
            collisions: Vec::new(),
            arrival_times: vec![None; agents.len()],
            payments: vec![0.0; agents.len()],
            utilities: vec![0.0; agents.len()],
            completed: false,
            timed_out: false,
        }
    }

    pub fn ticks(&self) -> usize {
        self.configurations.len() - 1
    }

    /// `tick,agent,row,col,action,waiting` with the position at the start of
    /// the tick.
    pub fn to_trace_log(&self) -> String {
        let mut out = String::from("tick,agent,row,col,action,waiting\n");
        for s in &self.steps {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                s.tick, s.agent, s.from.row, s.from.col, s.action, s.waiting as u8
            )
            .unwrap();
        }
        out
    }

    /// `tick,cell,contenders,bids,sigma,payments,utilities`; the cell is
    /// `row:col` and list fields are `;`-separated in contender order.
    pub fn to_auction_log(&self) -> String {
        fn join<T: ToString>(xs: &[T]) -> String {
            xs.iter().map(T::to_string).collect::<Vec<_>>().join(";")
        }
        let mut out = String::from("tick,cell,contenders,bids,sigma,payments,utilities\n");
        for c in &self.conflicts {
            writeln!(
                out,
                "{},{}:{},{},{},{},{},{}",
                c.tick,
                c.cell.row,
                c.cell.col,
                join(&c.contenders),
                join(&c.bids),
                join(&c.turns),
                join(&c.payments),
                join(&c.utilities)
            )
            .unwrap();
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrialRun {
    pub trace: SimulationTrace,
    pub record: TrialRecord,
}

#[derive(Debug, Clone)]
struct Member {
    agent: usize,
    arrival: u32,
}

#[derive(Debug, Clone)]
struct ActiveOrdering {
    cell: Cell,
    members: Vec<Member>,
}

struct Engine<'a> {
    grid: &'a GridWorld,
    potentials: PotentialSet,
    agents: Vec<AgentState>,
    resolver: Resolver,
    rng: ChaCha8Rng,
    /// Deadlock-breaking rank, lower is stronger.
    rank: Vec<usize>,
    held: BTreeMap<usize, u32>,
    orderings: Vec<ActiveOrdering>,
    stuck: Vec<u32>,
    /// Ticks since the agent last reached a new lowest potential.
    idle: Vec<u32>,
    best: Vec<u32>,
    /// Agent temporarily ranked above everyone, with the tick its boost ends.
    boosted: Option<(usize, u32)>,
    boost_after: u32,
    /// Cell -> (beneficiary, expiry tick).
    reservations: BTreeMap<Cell, (usize, u32)>,
    trace: SimulationTrace,
}

impl<'a> Engine<'a> {
    fn new(scenario: &'a Scenario, resolver: Resolver, seed: u64) -> Self {
        let agents = scenario.agents.clone();
        let potentials = PotentialSet::for_agents(&scenario.grid, &agents)
            .expect("validated scenario goals are free cells");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_rank: Vec<usize> = (0..agents.len()).collect();
        match resolver {
            Resolver::Auction(_) => {
                by_rank.sort_by_key(|&i| (std::cmp::Reverse(agents[i].incentive), i))
            }
            Resolver::RandomOrdering => by_rank.shuffle(&mut rng),
            Resolver::Fifo => {}
        }
        let mut rank = vec![0; agents.len()];
        for (r, &i) in by_rank.iter().enumerate() {
            rank[i] = r;
        }
        let trace = SimulationTrace::new(&agents);
        let stuck = vec![0; agents.len()];
        Engine {
            grid: &scenario.grid,
            potentials,
            agents,
            resolver,
            rng,
            rank,
            held: BTreeMap::new(),
            orderings: Vec::new(),
            stuck,
            idle: vec![0; scenario.agents.len()],
            best: vec![u32::MAX; scenario.agents.len()],
            boosted: None,
            boost_after: (scenario.grid.width() + scenario.grid.height()) as u32,
            reservations: BTreeMap::new(),
            trace,
        }
    }

    fn effective_rank(&self, id: usize) -> usize {
        match self.boosted {
            Some((b, _)) if b == id => 0,
            _ => self.rank[id] + 1,
        }
    }

    /// Hands the boost to the longest-idle agent once the previous holder
    /// arrived or its boost ran out.
    fn update_boost(&mut self, tick: u32) {
        if let Some((b, until)) = self.boosted {
            if self.agents[b].arrived || tick >= until {
                self.boosted = None;
            }
        }
        if self.boosted.is_none() {
            self.boosted = (0..self.agents.len())
                .filter(|&i| !self.agents[i].arrived && self.idle[i] >= self.boost_after)
                .max_by_key(|&i| (self.idle[i], std::cmp::Reverse(self.rank[i])))
                .map(|i| (i, tick + 2 * self.boost_after));
        }
    }

    fn all_arrived(&self) -> bool {
        self.agents.iter().all(|a| a.arrived)
    }

    fn is_blocked_for(&self, id: usize, occupied: &HashSet<Cell>, cell: Cell) -> bool {
        occupied.contains(&cell)
            || self
                .reservations
                .get(&cell)
                .is_some_and(|(owner, _)| *owner != id)
    }

    fn propose(&self, id: usize, occupied: &HashSet<Cell>) -> MoveAction {
        let agent = &self.agents[id];
        let cands = descending_moves(self.grid, self.potentials.for_agent(agent), agent, |c| {
            self.is_blocked_for(id, occupied, c)
        });
        choose_move(agent, &cands)
    }

    /// Orders `contenders` (agent, conflict arrival tick) and logs the
    /// outcome. Returns agent ids in turn order.
    fn resolve(&mut self, tick: u32, cell: Cell, contenders: &[(usize, u32)]) -> Vec<usize> {
        let k = contenders.len();
        let values: Vec<f64> = contenders
            .iter()
            .map(|(a, _)| self.agents[*a].incentive as f64)
            .collect();
        let (order, turns, bids, payments, utilities) = match self.resolver {
            Resolver::Auction(rule) => {
                let bids: Vec<Bid<f64>> = contenders
                    .iter()
                    .zip(&values)
                    .map(|((a, t), v)| Bid::new(*a, *v).arriving(*t))
                    .collect();
                let schedule = match rule {
                    ScheduleRule::Harmonic => RewardSchedule::harmonic(k),
                    ScheduleRule::RemainingDistance => {
                        let winner = crate::auction::allocate(&bids).expect("valid bids")[0];
                        let agent = &self.agents[bids[winner].agent];
                        let d = self
                            .potentials
                            .for_agent(agent)
                            .get(agent.pos)
                            .unwrap_or(1)
                            .max(1);
                        RewardSchedule::delayed(d as f64, k)
                    }
                };
                let out = run_auction(&bids, &values, &schedule).expect("two or more valid bids");
                let amounts = bids.iter().map(|b| b.amount).collect();
                (out.order, out.turns, amounts, out.payments, out.utilities)
            }
            Resolver::RandomOrdering | Resolver::Fifo => {
                let mut idx: Vec<usize> = (0..k).collect();
                if self.resolver == Resolver::RandomOrdering {
                    idx.shuffle(&mut self.rng);
                } else {
                    idx.sort_by_key(|&i| (contenders[i].1, contenders[i].0));
                }
                let schedule = RewardSchedule::<f64>::harmonic(k);
                let mut turns = vec![0; k];
                for (pos, &i) in idx.iter().enumerate() {
                    turns[i] = pos + 1;
                }
                let utilities = (0..k)
                    .map(|i| values[i] * schedule.alpha(turns[i]))
                    .collect();
                let order = idx.iter().map(|&i| contenders[i].0).collect();
                (order, turns, vec![0.0; k], vec![0.0; k], utilities)
            }
        };
        for (i, (a, _)) in contenders.iter().enumerate() {
            self.trace.payments[*a] += payments[i];
            self.trace.utilities[*a] += utilities[i];
        }
        self.trace.conflicts.push(ConflictRecord {
            tick,
            cell,
            contenders: contenders.iter().map(|(a, _)| *a).collect(),
            bids,
            turns,
            payments,
            utilities,
        });
        order
    }

    /// Installs an ordering: the first agent may go now, turn `q` is held
    /// until `tick + q - 1`.
    fn install(&mut self, tick: u32, cell: Cell, order: &[usize], arrival: &BTreeMap<usize, u32>) {
        let members = order
            .iter()
            .enumerate()
            .map(|(pos, &agent)| {
                let release = tick + pos as u32;
                if pos == 0 {
                    self.held.remove(&agent);
                } else {
                    self.held.insert(agent, release);
                }
                Member {
                    agent,
                    arrival: arrival.get(&agent).copied().unwrap_or(tick),
                }
            })
            .collect();
        self.orderings.push(ActiveOrdering { cell, members });
    }

    fn step(&mut self, tick: u32) {
        self.held.retain(|_, release| *release > tick);
        let held = &self.held;
        self.orderings
            .retain(|o| o.members.iter().any(|m| held.contains_key(&m.agent)));
        self.reservations.retain(|_, (_, expiry)| *expiry > tick);
        self.update_boost(tick);

        let occupied = occupied_cells(&self.agents);
        let active: Vec<usize> = (0..self.agents.len())
            .filter(|&i| !self.agents[i].arrived)
            .collect();
        let mut proposals: BTreeMap<usize, MoveAction> = active
            .iter()
            .filter(|i| !self.held.contains_key(i))
            .map(|&i| (i, self.propose(i, &occupied)))
            .collect();

        self.handle_intrusions(tick, &occupied, &mut proposals);
        self.resolve_conflicts(tick, &occupied, &mut proposals);
        let yields = self.push_blockers(tick, &proposals);
        self.execute(tick, &active, &proposals, &yields);
    }

    /// Agents cutting through a cell whose ordering still has waiting
    /// members trigger a fresh resolution among waiting members and
    /// newcomers.
    fn handle_intrusions(
        &mut self,
        tick: u32,
        occupied: &HashSet<Cell>,
        proposals: &mut BTreeMap<usize, MoveAction>,
    ) {
        // One pass: replacement orderings are not re-examined this tick.
        for ordering in std::mem::take(&mut self.orderings) {
            let members: BTreeSet<usize> = ordering.members.iter().map(|m| m.agent).collect();
            let intruders: Vec<usize> = proposals
                .iter()
                .filter(|(a, act)| {
                    !members.contains(a)
                        && Sweep::straight(self.agents[**a].pos, **act)
                            .entered
                            .contains(&ordering.cell)
                })
                .map(|(a, _)| *a)
                .collect();
            if intruders.is_empty() {
                self.orderings.push(ordering);
                continue;
            }
            let mut arrival: BTreeMap<usize, u32> = ordering
                .members
                .iter()
                .filter(|m| self.held.contains_key(&m.agent))
                .map(|m| (m.agent, m.arrival))
                .collect();
            for a in intruders {
                arrival.insert(a, tick);
            }
            let contenders: Vec<(usize, u32)> = arrival.iter().map(|(a, t)| (*a, *t)).collect();
            if contenders.len() < 2 {
                continue;
            }
            let order = self.resolve(tick, ordering.cell, &contenders);
            for &a in &order[1..] {
                proposals.remove(&a);
            }
            self.install(tick, ordering.cell, &order, &arrival);
            let first = order[0];
            if let std::collections::btree_map::Entry::Vacant(e) = proposals.entry(first) {
                e.insert(self.propose(first, occupied));
            }
        }
    }

    fn resolve_conflicts(
        &mut self,
        tick: u32,
        occupied: &HashSet<Cell>,
        proposals: &mut BTreeMap<usize, MoveAction>,
    ) {
        for conflict in detect_conflicts(&self.agents, proposals, tick) {
            reassign_with(
                &conflict,
                proposals,
                &self.agents,
                self.grid,
                &self.potentials,
                |id, c| self.is_blocked_for(id, occupied, c),
            );
        }
        // Reassignment can split a group; resolve what still collides.
        for conflict in detect_conflicts(&self.agents, proposals, tick) {
            let contenders: Vec<(usize, u32)> =
                conflict.contenders.iter().map(|&a| (a, tick)).collect();
            let arrival = contenders.iter().copied().collect();
            let order = self.resolve(tick, conflict.cell, &contenders);
            for &a in &order[1..] {
                proposals.insert(a, MoveAction::WAIT);
            }
            self.install(tick, conflict.cell, &order, &arrival);
        }
    }

    /// Stuck agents (no descent available for [`YIELD_PATIENCE`] ticks) ask
    /// a lower-ranked stationary blocker to step aside. Returns the yield
    /// moves.
    fn push_blockers(
        &mut self,
        tick: u32,
        proposals: &BTreeMap<usize, MoveAction>,
    ) -> BTreeMap<usize, Direction> {
        let mut claims: HashMap<Cell, usize> = HashMap::new();
        let mut decided: HashSet<usize> = HashSet::new();
        let mut occupant: HashMap<Cell, usize> = HashMap::new();
        for (i, a) in self.agents.iter().enumerate().filter(|(_, a)| !a.arrived) {
            claims.insert(a.pos, i);
            occupant.insert(a.pos, i);
        }
        for (&id, &action) in proposals {
            if !action.is_wait() {
                decided.insert(id);
                for c in Sweep::straight(self.agents[id].pos, action).entered {
                    claims.insert(c, id);
                }
            }
        }
        let mut stuck: Vec<usize> = Vec::new();
        for (&id, &action) in proposals {
            if action.is_wait() {
                self.stuck[id] += 1;
                if self.stuck[id] >= YIELD_PATIENCE {
                    stuck.push(id);
                }
            } else {
                self.stuck[id] = 0;
            }
        }
        stuck.sort_by_key(|&i| self.effective_rank(i));

        let contested: HashSet<Cell> = self.orderings.iter().map(|o| o.cell).collect();
        let mut yields = BTreeMap::new();
        let mut vacated = Vec::new();
        for a in stuck {
            if !decided.insert(a) {
                continue;
            }
            let agent = &self.agents[a];
            let pot = self.potentials.for_agent(agent);
            let here = pot.get(agent.pos).unwrap_or(u32::MAX);
            let mut wanted: Vec<Cell> = self
                .grid
                .free_neighbors(agent.pos)
                .filter(|c| pot.get(*c).is_some_and(|p| p < here))
                .collect();
            wanted.sort_by_key(|c| pot.get(*c));
            for c in wanted {
                let Some(&b) = occupant.get(&c) else { continue };
                if decided.contains(&b) || self.effective_rank(b) < self.effective_rank(a) {
                    continue;
                }
                let mut ctx = PushCtx {
                    claims: &mut claims,
                    decided: &mut decided,
                    occupant: &occupant,
                    contested: &contested,
                    yields: &mut yields,
                    vacated: &mut vacated,
                    initiator_rank: self.effective_rank(a),
                };
                self.push(b, a, 0, &mut ctx);
                break;
            }
        }
        for (cell, owner) in vacated {
            self.reservations
                .insert(cell, (owner, tick + RESERVATION_TICKS));
        }
        yields
    }

    /// Tries to move `b` one cell aside for `requester`, recursing into
    /// `b`'s own blockers when it has no open neighbor. Returns true when `b`
    /// itself moves this tick.
    fn push(&self, b: usize, requester: usize, depth: usize, ctx: &mut PushCtx<'_>) -> bool {
        ctx.decided.insert(b);
        let agent = &self.agents[b];
        let pot = self.potentials.for_agent(agent);
        let mut options: Vec<(Direction, Cell)> = Direction::MOVES
            .into_iter()
            .map(|d| (d, agent.pos.offset(d, 1)))
            .filter(|(_, c)| self.grid.is_free(*c))
            .collect();
        options.sort_by_key(|(d, c)| (pot.get(*c).unwrap_or(u32::MAX), *d));
        let open = |c: &Cell| {
            !ctx.claims.contains_key(c)
                && !ctx.contested.contains(c)
                && self
                    .reservations
                    .get(c)
                    .is_none_or(|(owner, _)| *owner == b)
        };
        if let Some(&(dir, cell)) = options.iter().find(|(_, c)| open(c)) {
            ctx.claims.insert(cell, b);
            ctx.yields.insert(b, dir);
            ctx.vacated.push((agent.pos, requester));
            return true;
        }
        if depth < MAX_PUSH_DEPTH {
            for (_, cell) in options {
                let Some(&next) = ctx.occupant.get(&cell) else {
                    continue;
                };
                if next == requester
                    || ctx.decided.contains(&next)
                    || self.effective_rank(next) < ctx.initiator_rank
                {
                    continue;
                }
                if self.push(next, b, depth + 1, ctx) {
                    break;
                }
            }
        }
        false
    }

    fn execute(
        &mut self,
        tick: u32,
        active: &[usize],
        proposals: &BTreeMap<usize, MoveAction>,
        yields: &BTreeMap<usize, Direction>,
    ) {
        let mut sweeps: Vec<(usize, Sweep, MoveAction, bool)> = Vec::with_capacity(active.len());
        for &id in active {
            let pos = self.agents[id].pos;
            let (action, yielded) = match (yields.get(&id), proposals.get(&id)) {
                (Some(&dir), _) => (MoveAction::new(dir, 1), true),
                (None, Some(&a)) => (a, false),
                (None, None) => (MoveAction::WAIT, false),
            };
            sweeps.push((id, Sweep::straight(pos, action), action, yielded));
        }
        for i in 0..sweeps.len() {
            for j in i + 1..sweeps.len() {
                let (a, b) = (&sweeps[i].1, &sweeps[j].1);
                if a.collides(b) {
                    let cell = a
                        .shared_cells(b)
                        .first()
                        .copied()
                        .unwrap_or(a.start.min(b.start));
                    self.trace.collisions.push(Collision {
                        tick,
                        cell,
                        agents: [sweeps[i].0, sweeps[j].0],
                    });
                }
            }
        }
        for (id, sweep, action, yielded) in sweeps {
            let end = sweep.end();
            self.trace.steps.push(StepRecord {
                tick,
                agent: id,
                from: sweep.start,
                to: end,
                action,
                waiting: action.is_wait(),
                yielded,
            });
            let reached = self.potentials.for_agent(&self.agents[id]).get(end);
            if reached.is_some_and(|p| p < self.best[id]) {
                self.best[id] = reached.unwrap();
                self.idle[id] = 0;
            } else {
                self.idle[id] += 1;
            }
            let agent = &mut self.agents[id];
            agent.pos = end;
            if self
                .reservations
                .get(&end)
                .is_some_and(|(owner, _)| *owner == id)
            {
                self.reservations.remove(&end);
            }
            if end == agent.goal {
                agent.arrived = true;
                agent.arrival_time = Some(tick + 1);
                self.trace.arrival_times[id] = Some(tick + 1);
                self.held.remove(&id);
                self.reservations.retain(|_, (owner, _)| *owner != id);
            }
        }
        self.trace
            .configurations
            .push(self.agents.iter().map(|a| a.pos).collect());
    }
}

struct PushCtx<'c> {
    claims: &'c mut HashMap<Cell, usize>,
    decided: &'c mut HashSet<usize>,
    occupant: &'c HashMap<Cell, usize>,
    contested: &'c HashSet<Cell>,
    yields: &'c mut BTreeMap<usize, Direction>,
    /// Cells freed by yields, with the agent they were freed for.
    vacated: &'c mut Vec<(Cell, usize)>,
    /// Agents ranked above the agent that started the chain are never moved.
    initiator_rank: usize,
}

/// Runs one trial to completion, tick limit or timeout.
pub fn run_trial(
    scenario: &Scenario,
    resolver: Resolver,
    limits: TrialLimits,
    seed: u64,
) -> TrialRun {
    let started = Instant::now();
    let mut engine = Engine::new(scenario, resolver, seed);
    let mut tick = 0;
    while !engine.all_arrived() && tick < limits.tick_limit {
        if limits.timeout.is_some_and(|t| started.elapsed() > t) {
            engine.trace.timed_out = true;
            break;
        }
        engine.step(tick);
        tick += 1;
    }
    engine.trace.completed = engine.all_arrived();
    let runtime = started.elapsed();
    let record = score_trial(&engine.trace, scenario, runtime, resolver.label());
    TrialRun {
        trace: engine.trace,
        record,
    }
}
