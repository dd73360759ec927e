//! Grid graph, agent state, the discrete transition rule, and scenario
//! construction for the doorway / hallway / intersection / random-obstacle
//! environments.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bounded retry count for start/goal and obstacle rejection sampling.
pub const PLACEMENT_RETRIES: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WorldError {
    #[error("illegal action {action:?} from {from}: {reason}")]
    IllegalAction {
        from: Cell,
        action: MoveAction,
        reason: &'static str,
    },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("scenario needs at least one agent")]
    NoAgents,
    #[error("grid must be at least {min_width}x{min_height} for this kind, got {width}x{height}")]
    GridTooSmall {
        width: usize,
        height: usize,
        min_width: usize,
        min_height: usize,
    },
    #[error("gap size {gap} must be >= 1 and smaller than the wall span {span}")]
    InvalidGap { gap: usize, span: usize },
    #[error("incentive range [{min}, {max}] must be nonempty with min >= 1")]
    InvalidIncentives { min: u32, max: u32 },
    #[error("placement infeasible: {0}")]
    PlacementInfeasible(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// A grid cell as (row, col), row 0 at the top.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[i32; 2]", into = "[i32; 2]")]
pub struct Cell {
    pub row: i32,
    pub col: i32,
}

impl Cell {
    pub const fn new(row: i32, col: i32) -> Self {
        Cell { row, col }
    }

    pub fn offset(self, dir: Direction, steps: i32) -> Cell {
        let (dr, dc) = dir.delta();
        Cell::new(self.row + dr * steps, self.col + dc * steps)
    }

    pub fn manhattan(self, other: Cell) -> u32 {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

impl From<[i32; 2]> for Cell {
    fn from(v: [i32; 2]) -> Self {
        Cell::new(v[0], v[1])
    }
}

impl From<Cell> for [i32; 2] {
    fn from(c: Cell) -> Self {
        [c.row, c.col]
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
    Wait,
}

impl Direction {
    /// The four moving directions, vertical axis first.
    pub const MOVES: [Direction; 4] = [
        Direction::Up,
        Direction::Down,
        Direction::Left,
        Direction::Right,
    ];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Direction::Up => (-1, 0),
            Direction::Down => (1, 0),
            Direction::Left => (0, -1),
            Direction::Right => (0, 1),
            Direction::Wait => (0, 0),
        }
    }

    pub fn inverse(self) -> Direction {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
            Direction::Wait => Direction::Wait,
        }
    }

    pub fn is_vertical(self) -> bool {
        matches!(self, Direction::Up | Direction::Down)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Wait => "wait",
        }
    }
}

/// One agent action: a direction plus a step length `0 <= step <= incentive`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MoveAction {
    pub direction: Direction,
    pub step: u32,
}

impl MoveAction {
    pub const WAIT: MoveAction = MoveAction {
        direction: Direction::Wait,
        step: 0,
    };

    pub fn new(direction: Direction, step: u32) -> Self {
        MoveAction { direction, step }
    }

    pub fn is_wait(&self) -> bool {
        self.direction == Direction::Wait
    }

    pub fn inverse(&self) -> MoveAction {
        MoveAction::new(self.direction.inverse(), self.step)
    }
}

impl fmt::Display for MoveAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_wait() {
            f.write_str("wait")
        } else {
            write!(f, "{}{}", self.direction.as_str(), self.step)
        }
    }
}

/// Rectangular 4-connected grid with static obstacle cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridWorld {
    width: usize,
    height: usize,
    blocked: Vec<bool>,
}

impl GridWorld {
    pub fn new(width: usize, height: usize) -> Result<Self, WorldError> {
        if width == 0 || height == 0 {
            return Err(WorldError::InvalidGrid(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(GridWorld {
            width,
            height,
            blocked: vec![false; width * height],
        })
    }

    pub fn with_obstacles(
        width: usize,
        height: usize,
        obstacles: impl IntoIterator<Item = Cell>,
    ) -> Result<Self, WorldError> {
        let mut grid = GridWorld::new(width, height)?;
        for cell in obstacles {
            if !grid.in_bounds(cell) {
                return Err(WorldError::InvalidGrid(format!(
                    "obstacle {cell} outside {width}x{height} grid"
                )));
            }
            grid.set_obstacle(cell, true);
        }
        Ok(grid)
    }

    /// Parses an ASCII map, `.` free and `#` obstacle, one row per line.
    pub fn from_ascii(text: &str) -> Result<Self, WorldError> {
        let rows: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        let mut grid = GridWorld::new(width, height)?;
        for (r, line) in rows.iter().enumerate() {
            if line.chars().count() != width {
                return Err(WorldError::InvalidGrid(format!(
                    "row {r} has {} cells, expected {width}",
                    line.chars().count()
                )));
            }
            for (c, ch) in line.chars().enumerate() {
                match ch {
                    '.' => {}
                    '#' => grid.set_obstacle(Cell::new(r as i32, c as i32), true),
                    other => {
                        return Err(WorldError::InvalidGrid(format!(
                            "unexpected map character {other:?} at row {r}, col {c}"
                        )))
                    }
                }
            }
        }
        Ok(grid)
    }

    pub fn to_ascii(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                out.push(if self.blocked[r * self.width + c] {
                    '#'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.row >= 0
            && cell.col >= 0
            && (cell.row as usize) < self.height
            && (cell.col as usize) < self.width
    }

    /// Row-major index; the cell must be in bounds.
    pub fn index(&self, cell: Cell) -> usize {
        debug_assert!(self.in_bounds(cell));
        cell.row as usize * self.width + cell.col as usize
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new((index / self.width) as i32, (index % self.width) as i32)
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        self.in_bounds(cell) && !self.blocked[self.index(cell)]
    }

    pub fn is_obstacle(&self, cell: Cell) -> bool {
        self.in_bounds(cell) && self.blocked[self.index(cell)]
    }

    pub fn set_obstacle(&mut self, cell: Cell, blocked: bool) {
        let idx = self.index(cell);
        self.blocked[idx] = blocked;
    }

    pub fn obstacles(&self) -> impl Iterator<Item = Cell> + '_ {
        self.blocked
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| self.cell_at(i))
    }

    pub fn obstacle_count(&self) -> usize {
        self.blocked.iter().filter(|b| **b).count()
    }

    pub fn free_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.blocked
            .iter()
            .enumerate()
            .filter(|(_, b)| !**b)
            .map(|(i, _)| self.cell_at(i))
    }

    pub fn free_neighbors(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        Direction::MOVES
            .into_iter()
            .map(move |d| cell.offset(d, 1))
            .filter(|c| self.is_free(*c))
    }

    /// Unit-cost BFS distances from `source` over free cells; `None` where
    /// unreachable.
    pub fn bfs_distances(&self, source: Cell) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.width * self.height];
        if !self.is_free(source) {
            return dist;
        }
        let mut queue = VecDeque::new();
        dist[self.index(source)] = Some(0);
        queue.push_back(source);
        while let Some(cell) = queue.pop_front() {
            let d = dist[self.index(cell)].unwrap();
            for n in self.free_neighbors(cell) {
                let slot = &mut dist[self.index(n)];
                if slot.is_none() {
                    *slot = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    pub fn distance(&self, from: Cell, to: Cell) -> Option<u32> {
        if !self.is_free(to) {
            return None;
        }
        self.bfs_distances(from)[self.index(to)]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: usize,
    pub pos: Cell,
    pub goal: Cell,
    /// Private incentive: maximum cells per move and the truthful bid.
    pub incentive: u32,
    pub arrived: bool,
    pub arrival_time: Option<u32>,
}

impl AgentState {
    pub fn new(id: usize, start: Cell, goal: Cell, incentive: u32) -> Self {
        AgentState {
            id,
            pos: start,
            goal,
            incentive,
            arrived: false,
            arrival_time: None,
        }
    }
}

/// Applies `action` to `agent` and returns the resulting cell. Occupancy and
/// obstacles are the planner's concern; only the bounds of the swept segment
/// and the step limit are checked here.
pub fn apply_action(
    agent: &AgentState,
    action: MoveAction,
    grid: &GridWorld,
) -> Result<Cell, WorldError> {
    let illegal = |reason| WorldError::IllegalAction {
        from: agent.pos,
        action,
        reason,
    };
    match (action.direction, action.step) {
        (Direction::Wait, 0) => return Ok(agent.pos),
        (Direction::Wait, _) => return Err(illegal("wait must have step 0")),
        (_, 0) => return Err(illegal("moves need step >= 1")),
        _ => {}
    }
    if action.step > agent.incentive {
        return Err(illegal("step exceeds incentive"));
    }
    let dest = agent.pos.offset(action.direction, action.step as i32);
    // The segment is straight, so checking the endpoint covers every
    // intermediate cell.
    if !grid.in_bounds(dest) || !grid.in_bounds(agent.pos) {
        return Err(illegal("sweep leaves the grid"));
    }
    Ok(dest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Doorway,
    Hallway,
    Intersection,
    RandomObstacles,
    Custom,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Doorway => "doorway",
            ScenarioKind::Hallway => "hallway",
            ScenarioKind::Intersection => "intersection",
            ScenarioKind::RandomObstacles => "random-obstacles",
            ScenarioKind::Custom => "custom",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "doorway" => Ok(ScenarioKind::Doorway),
            "hallway" => Ok(ScenarioKind::Hallway),
            "intersection" => Ok(ScenarioKind::Intersection),
            "random-obstacles" | "random_obstacles" | "obstacles" => {
                Ok(ScenarioKind::RandomObstacles)
            }
            "custom" => Ok(ScenarioKind::Custom),
            other => Err(format!("unknown scenario kind {other:?}")),
        }
    }
}

/// Inputs to [`make_scenario`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioParams {
    pub kind: ScenarioKind,
    pub width: usize,
    pub height: usize,
    pub n_agents: usize,
    /// Doorway gap, hallway width, or intersection corridor width.
    pub gap_size: usize,
    /// Random-obstacles only.
    pub n_obstacles: usize,
    pub incentive_min: u32,
    pub incentive_max: u32,
    pub seed: u64,
}

impl ScenarioParams {
    pub fn new(kind: ScenarioKind, width: usize, height: usize, n_agents: usize) -> Self {
        ScenarioParams {
            kind,
            width,
            height,
            n_agents,
            gap_size: 1,
            n_obstacles: 0,
            incentive_min: 1,
            incentive_max: 3,
            seed: 0,
        }
    }

    pub fn gap(mut self, gap_size: usize) -> Self {
        self.gap_size = gap_size;
        self
    }

    pub fn obstacles(mut self, n_obstacles: usize) -> Self {
        self.n_obstacles = n_obstacles;
        self
    }

    pub fn incentives(mut self, min: u32, max: u32) -> Self {
        self.incentive_min = min;
        self.incentive_max = max;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub grid: GridWorld,
    /// Initial configuration; every agent starts unarrived.
    pub agents: Vec<AgentState>,
    pub kind: ScenarioKind,
    /// 0 when the kind has no gap parameter.
    pub gap_size: usize,
    pub rng_seed: u64,
}

impl Scenario {
    /// Builds a scenario from explicit parts and checks every invariant.
    pub fn from_parts(
        grid: GridWorld,
        agents: Vec<AgentState>,
        kind: ScenarioKind,
        gap_size: usize,
        rng_seed: u64,
    ) -> Result<Self, ScenarioError> {
        let scenario = Scenario {
            grid,
            agents,
            kind,
            gap_size,
            rng_seed,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.agents.is_empty() {
            return Err(ScenarioError::NoAgents);
        }
        let mut starts = BTreeSet::new();
        let mut goals = BTreeSet::new();
        for (i, a) in self.agents.iter().enumerate() {
            if a.id != i {
                return Err(ScenarioError::Invalid(format!(
                    "agent at index {i} has id {}",
                    a.id
                )));
            }
            if a.incentive == 0 {
                return Err(ScenarioError::Invalid(format!(
                    "agent {i} has zero incentive"
                )));
            }
            if !self.grid.is_free(a.pos) || !self.grid.is_free(a.goal) {
                return Err(ScenarioError::Invalid(format!(
                    "agent {i} start {} or goal {} is not a free cell",
                    a.pos, a.goal
                )));
            }
            if !starts.insert(a.pos) {
                return Err(ScenarioError::Invalid(format!("duplicate start {}", a.pos)));
            }
            if !goals.insert(a.goal) {
                return Err(ScenarioError::Invalid(format!("duplicate goal {}", a.goal)));
            }
            if self.grid.distance(a.pos, a.goal).is_none() {
                return Err(ScenarioError::Invalid(format!(
                    "agent {i} goal {} unreachable from {}",
                    a.goal, a.pos
                )));
            }
        }
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn n_obstacles(&self) -> usize {
        self.grid.obstacle_count()
    }

    pub fn incentives(&self) -> Vec<u32> {
        self.agents.iter().map(|a| a.incentive).collect()
    }

    /// ASCII rendering: `#` obstacle, `.` free, `A`.. starts, `a`.. goals
    /// (agent id modulo 26); `*` where a start and a goal coincide.
    pub fn render_ascii(&self) -> String {
        let w = self.grid.width();
        let mut chars: Vec<Vec<char>> = self
            .grid
            .to_ascii()
            .lines()
            .map(|l| l.chars().collect())
            .collect();
        for a in &self.agents {
            let letter = (a.id % 26) as u8;
            let g = &mut chars[a.goal.row as usize][a.goal.col as usize];
            *g = (b'a' + letter) as char;
        }
        for a in &self.agents {
            let letter = (a.id % 26) as u8;
            let s = &mut chars[a.pos.row as usize][a.pos.col as usize];
            *s = if s.is_ascii_lowercase() {
                '*'
            } else {
                (b'A' + letter) as char
            };
        }
        let mut out = String::with_capacity((w + 1) * chars.len());
        for row in chars {
            out.extend(row);
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ScenarioFile::from(self)).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile =
            serde_json::from_str(text).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        file.into_scenario()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentSpec {
    pub start: Cell,
    pub goal: Cell,
    pub incentive: u32,
}

/// On-disk scenario layout. Either `width`/`height`/`obstacles` or an ASCII
/// `map` describes the grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub kind: ScenarioKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default)]
    pub obstacles: Vec<Cell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<Vec<String>>,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub gap_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        ScenarioFile {
            kind: s.kind,
            width: Some(s.grid.width()),
            height: Some(s.grid.height()),
            obstacles: s.grid.obstacles().collect(),
            map: None,
            agents: s
                .agents
                .iter()
                .map(|a| AgentSpec {
                    start: a.pos,
                    goal: a.goal,
                    incentive: a.incentive,
                })
                .collect(),
            gap_size: s.gap_size,
            seed: s.rng_seed,
        }
    }
}

impl ScenarioFile {
    pub fn into_scenario(self) -> Result<Scenario, ScenarioError> {
        let grid_err = |e: WorldError| ScenarioError::Invalid(e.to_string());
        let grid = match (&self.map, self.width, self.height) {
            (Some(rows), _, _) => {
                let mut grid = GridWorld::from_ascii(&rows.join("\n")).map_err(grid_err)?;
                for &c in &self.obstacles {
                    if !grid.in_bounds(c) {
                        return Err(ScenarioError::Invalid(format!(
                            "obstacle {c} out of bounds"
                        )));
                    }
                    grid.set_obstacle(c, true);
                }
                grid
            }
            (None, Some(w), Some(h)) => {
                GridWorld::with_obstacles(w, h, self.obstacles.iter().copied()).map_err(grid_err)?
            }
            _ => {
                return Err(ScenarioError::Invalid(
                    "scenario needs either `map` or `width` and `height`".into(),
                ))
            }
        };
        let agents = self
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| AgentState::new(i, a.start, a.goal, a.incentive))
            .collect();
        Scenario::from_parts(grid, agents, self.kind, self.gap_size, self.seed)
    }
}

/// Builds a seeded scenario of the requested kind. Deterministic in `params`.
pub fn make_scenario(params: &ScenarioParams) -> Result<Scenario, ScenarioError> {
    if params.n_agents == 0 {
        return Err(ScenarioError::NoAgents);
    }
    if params.incentive_min == 0 || params.incentive_min > params.incentive_max {
        return Err(ScenarioError::InvalidIncentives {
            min: params.incentive_min,
            max: params.incentive_max,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (grid, placement, gap) = match params.kind {
        ScenarioKind::Doorway => {
            let (grid, regions) = doorway_layout(params)?;
            (grid, Placement::Sides(regions), params.gap_size)
        }
        ScenarioKind::Hallway => {
            let (grid, regions) = hallway_layout(params)?;
            (grid, Placement::Sides(regions), params.gap_size)
        }
        ScenarioKind::Intersection => {
            let (grid, arms) = intersection_layout(params)?;
            (grid, Placement::Arms(arms), params.gap_size)
        }
        ScenarioKind::RandomObstacles => {
            return random_obstacle_scenario(params, &mut rng);
        }
        ScenarioKind::Custom => {
            return Err(ScenarioError::Invalid(
                "custom scenarios are loaded from files, not generated".into(),
            ))
        }
    };
    let agents = place_agents(&grid, &placement, params, &mut rng)?;
    Scenario::from_parts(grid, agents, params.kind, gap, params.seed)
}

enum Placement {
    /// Agent `i` starts in `regions[i % 2].0` with its goal in `regions[i % 2].1`.
    Sides([(Vec<Cell>, Vec<Cell>); 2]),
    /// Agents start round-robin across the arms; goals lie in a different arm.
    Arms(Vec<Vec<Cell>>),
}

fn check_gap(gap: usize, span: usize) -> Result<(), ScenarioError> {
    if gap == 0 || gap >= span {
        return Err(ScenarioError::InvalidGap { gap, span });
    }
    Ok(())
}

fn require_dims(
    p: &ScenarioParams,
    min_width: usize,
    min_height: usize,
) -> Result<(), ScenarioError> {
    if p.width < min_width || p.height < min_height {
        return Err(ScenarioError::GridTooSmall {
            width: p.width,
            height: p.height,
            min_width,
            min_height,
        });
    }
    Ok(())
}

fn cells_where(grid: &GridWorld, pred: impl Fn(Cell) -> bool) -> Vec<Cell> {
    grid.free_cells().filter(|c| pred(*c)).collect()
}

/// A grid plus (start region, goal region) for each of the two agent groups.
type Layout = (GridWorld, [(Vec<Cell>, Vec<Cell>); 2]);

/// One full-height wall column at `width / 2` with `gap_size` centred free
/// cells. Everyone starts left of the wall and ends right of it.
fn doorway_layout(p: &ScenarioParams) -> Result<Layout, ScenarioError> {
    require_dims(p, 3, 2)?;
    check_gap(p.gap_size, p.height)?;
    let wall_col = (p.width / 2) as i32;
    let gap_start = ((p.height - p.gap_size) / 2) as i32;
    let gap_end = gap_start + p.gap_size as i32;
    let wall = (0..p.height as i32)
        .filter(|r| *r < gap_start || *r >= gap_end)
        .map(|r| Cell::new(r, wall_col));
    let grid = GridWorld::with_obstacles(p.width, p.height, wall).map_err(invalid)?;
    let left = cells_where(&grid, |c| c.col < wall_col);
    let right = cells_where(&grid, |c| c.col > wall_col);
    Ok((grid, [(left.clone(), right.clone()), (left, right)]))
}

/// A corridor of `gap_size` rows through the middle half of the columns,
/// solid wall above and below it. Agents alternate between the two open
/// ends and head for the opposite end.
fn hallway_layout(p: &ScenarioParams) -> Result<Layout, ScenarioError> {
    require_dims(p, 4, 2)?;
    check_gap(p.gap_size, p.height)?;
    let c0 = (p.width / 4).max(1) as i32;
    let c1 = p.width as i32 - c0;
    let r0 = ((p.height - p.gap_size) / 2) as i32;
    let r1 = r0 + p.gap_size as i32;
    let walls = (0..p.height as i32)
        .filter(|r| *r < r0 || *r >= r1)
        .flat_map(|r| (c0..c1).map(move |c| Cell::new(r, c)));
    let grid = GridWorld::with_obstacles(p.width, p.height, walls).map_err(invalid)?;
    let left = cells_where(&grid, |c| c.col < c0);
    let right = cells_where(&grid, |c| c.col >= c1);
    Ok((grid, [(left.clone(), right.clone()), (right, left)]))
}

/// Two crossing corridors of width `gap_size`; everything else is wall.
/// Arms are the corridor cells outside the central square (N, S, W, E).
fn intersection_layout(p: &ScenarioParams) -> Result<(GridWorld, Vec<Vec<Cell>>), ScenarioError> {
    require_dims(p, 3, 3)?;
    check_gap(p.gap_size, p.width.min(p.height))?;
    let r0 = ((p.height - p.gap_size) / 2) as i32;
    let r1 = r0 + p.gap_size as i32;
    let c0 = ((p.width - p.gap_size) / 2) as i32;
    let c1 = c0 + p.gap_size as i32;
    let in_h = move |c: Cell| c.row >= r0 && c.row < r1;
    let in_v = move |c: Cell| c.col >= c0 && c.col < c1;
    let mut grid = GridWorld::new(p.width, p.height).map_err(invalid)?;
    for r in 0..p.height as i32 {
        for c in 0..p.width as i32 {
            let cell = Cell::new(r, c);
            if !in_h(cell) && !in_v(cell) {
                grid.set_obstacle(cell, true);
            }
        }
    }
    let arms: Vec<Vec<Cell>> = [
        cells_where(&grid, |c| in_v(c) && c.row < r0),
        cells_where(&grid, |c| in_v(c) && c.row >= r1),
        cells_where(&grid, |c| in_h(c) && c.col < c0),
        cells_where(&grid, |c| in_h(c) && c.col >= c1),
    ]
    .into_iter()
    .filter(|arm| !arm.is_empty())
    .collect();
    if arms.len() < 2 {
        return Err(ScenarioError::PlacementInfeasible(
            "intersection needs at least two nonempty arms".into(),
        ));
    }
    Ok((grid, arms))
}

fn invalid(e: WorldError) -> ScenarioError {
    ScenarioError::Invalid(e.to_string())
}

fn draw_incentives(p: &ScenarioParams, rng: &mut ChaCha8Rng) -> Vec<u32> {
    (0..p.n_agents)
        .map(|_| rng.random_range(p.incentive_min..=p.incentive_max))
        .collect()
}

fn place_agents(
    grid: &GridWorld,
    placement: &Placement,
    p: &ScenarioParams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<AgentState>, ScenarioError> {
    let incentives = draw_incentives(p, rng);
    for _ in 0..PLACEMENT_RETRIES {
        if let Some(pairs) = sample_pairs(grid, placement, p.n_agents, rng)? {
            return Ok(pairs
                .into_iter()
                .zip(incentives)
                .enumerate()
                .map(|(i, ((s, g), v))| AgentState::new(i, s, g, v))
                .collect());
        }
    }
    Err(ScenarioError::PlacementInfeasible(format!(
        "no valid start/goal assignment for {} agents after {PLACEMENT_RETRIES} attempts",
        p.n_agents
    )))
}

/// One rejection-sampling attempt. `Err` when the request can never fit,
/// `Ok(None)` when this draw was rejected.
fn sample_pairs(
    grid: &GridWorld,
    placement: &Placement,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Option<Vec<(Cell, Cell)>>, ScenarioError> {
    // Start and goal pools per agent.
    let pools: Vec<(&[Cell], Vec<&[Cell]>)> = match placement {
        Placement::Sides(regions) => (0..n)
            .map(|i| {
                let (s, g) = &regions[i % 2];
                (s.as_slice(), vec![g.as_slice()])
            })
            .collect(),
        Placement::Arms(arms) => (0..n)
            .map(|i| {
                let home = i % arms.len();
                let others = arms
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != home)
                    .map(|(_, a)| a.as_slice())
                    .collect();
                (arms[home].as_slice(), others)
            })
            .collect(),
    };
    let start_cells: BTreeSet<Cell> = pools.iter().flat_map(|(s, _)| s.iter().copied()).collect();
    let goal_cells: BTreeSet<Cell> = pools
        .iter()
        .flat_map(|(_, g)| g.iter().flat_map(|a| a.iter().copied()))
        .collect();
    if start_cells.len() < n || goal_cells.len() < n {
        return Err(ScenarioError::PlacementInfeasible(format!(
            "{n} agents need {n} distinct starts and goals; only {} start and {} goal cells",
            start_cells.len(),
            goal_cells.len()
        )));
    }
    let mut used_starts = BTreeSet::new();
    let mut used_goals = BTreeSet::new();
    let mut pairs = Vec::with_capacity(n);
    for (starts, goal_arms) in &pools {
        let free_starts: Vec<Cell> = starts
            .iter()
            .copied()
            .filter(|c| !used_starts.contains(c))
            .collect();
        let Some(&start) = free_starts.choose(rng) else {
            return Ok(None);
        };
        let arm = goal_arms[rng.random_range(0..goal_arms.len())];
        let free_goals: Vec<Cell> = arm
            .iter()
            .copied()
            .filter(|c| !used_goals.contains(c) && *c != start)
            .collect();
        let Some(&goal) = free_goals.choose(rng) else {
            return Ok(None);
        };
        if grid.distance(start, goal).is_none() {
            return Ok(None);
        }
        used_starts.insert(start);
        used_goals.insert(goal);
        pairs.push((start, goal));
    }
    Ok(Some(pairs))
}

fn random_obstacle_scenario(
    p: &ScenarioParams,
    rng: &mut ChaCha8Rng,
) -> Result<Scenario, ScenarioError> {
    require_dims(p, 1, 1)?;
    let cells = p.width * p.height;
    if p.n_obstacles + p.n_agents > cells {
        return Err(ScenarioError::PlacementInfeasible(format!(
            "{} obstacles and {} agents do not fit in {cells} cells",
            p.n_obstacles, p.n_agents
        )));
    }
    if p.n_agents > 1 && p.n_obstacles + p.n_agents + 1 > cells {
        return Err(ScenarioError::PlacementInfeasible(
            "no room for distinct starts and goals".into(),
        ));
    }
    let incentives = draw_incentives(p, rng);
    let all: Vec<usize> = (0..cells).collect();
    for _ in 0..PLACEMENT_RETRIES {
        let mut grid = GridWorld::new(p.width, p.height).map_err(invalid)?;
        for &idx in all.choose_multiple(rng, p.n_obstacles) {
            let cell = grid.cell_at(idx);
            grid.set_obstacle(cell, true);
        }
        let free: Vec<Cell> = grid.free_cells().collect();
        let mut starts = free.clone();
        starts.shuffle(rng);
        starts.truncate(p.n_agents);
        let mut goals = free;
        goals.shuffle(rng);
        goals.truncate(p.n_agents);
        if starts.iter().zip(&goals).any(|(s, g)| s == g) {
            continue;
        }
        if starts
            .iter()
            .zip(&goals)
            .any(|(s, g)| grid.distance(*s, *g).is_none())
        {
            continue;
        }
        let agents = starts
            .into_iter()
            .zip(goals)
            .zip(incentives.iter().copied())
            .enumerate()
            .map(|(i, ((s, g), v))| AgentState::new(i, s, g, v))
            .collect();
        return Scenario::from_parts(grid, agents, ScenarioKind::RandomObstacles, 0, p.seed);
    }
    Err(ScenarioError::PlacementInfeasible(format!(
        "no connected layout with {} obstacles after {PLACEMENT_RETRIES} attempts",
        p.n_obstacles
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent_at(pos: Cell, incentive: u32) -> AgentState {
        AgentState::new(0, pos, pos, incentive)
    }

    #[test]
    fn apply_action_moves_and_waits() {
        let grid = GridWorld::new(10, 10).unwrap();
        let a = agent_at(Cell::new(2, 2), 3);
        assert_eq!(
            apply_action(&a, MoveAction::new(Direction::Right, 3), &grid),
            Ok(Cell::new(2, 5))
        );
        assert_eq!(
            apply_action(&a, MoveAction::WAIT, &grid),
            Ok(Cell::new(2, 2))
        );
    }

    #[test]
    fn apply_action_rejects_out_of_bounds_and_oversteps() {
        let grid = GridWorld::new(5, 5).unwrap();
        let a = agent_at(Cell::new(0, 0), 3);
        assert!(matches!(
            apply_action(&a, MoveAction::new(Direction::Up, 1), &grid),
            Err(WorldError::IllegalAction { .. })
        ));
        let b = agent_at(Cell::new(2, 2), 1);
        assert!(apply_action(&b, MoveAction::new(Direction::Down, 2), &grid).is_err());
        assert!(apply_action(&b, MoveAction::new(Direction::Down, 0), &grid).is_err());
        assert!(apply_action(&b, MoveAction::new(Direction::Wait, 1), &grid).is_err());
    }

    #[test]
    fn doorway_has_single_gap_and_goals_across() {
        let params = ScenarioParams::new(ScenarioKind::Doorway, 10, 10, 2)
            .gap(1)
            .incentives(1, 3)
            .seed(7);
        let s = make_scenario(&params).unwrap();
        let wall_col = 5;
        let free_in_wall = (0..10)
            .filter(|r| s.grid.is_free(Cell::new(*r, wall_col)))
            .count();
        assert_eq!(free_in_wall, 1);
        for a in &s.agents {
            assert!(a.pos.col < wall_col && a.goal.col > wall_col);
            assert!(s.grid.distance(a.pos, a.goal).is_some());
            assert!((1..=3).contains(&a.incentive));
        }
    }

    #[test]
    fn zero_agents_rejected() {
        let params = ScenarioParams::new(ScenarioKind::Hallway, 10, 10, 0);
        assert_eq!(make_scenario(&params), Err(ScenarioError::NoAgents));
    }

    #[test]
    fn random_obstacles_paper_setting() {
        let params = ScenarioParams::new(ScenarioKind::RandomObstacles, 10, 10, 15)
            .obstacles(25)
            .seed(1);
        let s = make_scenario(&params).unwrap();
        assert_eq!(s.n_obstacles(), 25);
        assert_eq!(s.n_agents(), 15);
        for a in &s.agents {
            assert!(s.grid.distance(a.pos, a.goal).is_some());
        }
    }

    #[test]
    fn infeasible_requests_error_out() {
        let too_many = ScenarioParams::new(ScenarioKind::Intersection, 10, 10, 40).gap(1);
        assert!(matches!(
            make_scenario(&too_many),
            Err(ScenarioError::PlacementInfeasible(_))
        ));
        let bad_gap = ScenarioParams::new(ScenarioKind::Doorway, 10, 10, 2).gap(10);
        assert!(matches!(
            make_scenario(&bad_gap),
            Err(ScenarioError::InvalidGap { .. })
        ));
        let bad_v = ScenarioParams::new(ScenarioKind::Doorway, 10, 10, 2).incentives(0, 3);
        assert!(matches!(
            make_scenario(&bad_v),
            Err(ScenarioError::InvalidIncentives { .. })
        ));
    }

    #[test]
    fn hallway_and_intersection_are_well_formed() {
        for kind in [ScenarioKind::Hallway, ScenarioKind::Intersection] {
            for gap in 1..=3 {
                let s =
                    make_scenario(&ScenarioParams::new(kind, 10, 10, 4).gap(gap).seed(3)).unwrap();
                s.validate().unwrap();
            }
        }
    }

    #[test]
    fn json_round_trip_and_ascii_map() {
        let s =
            make_scenario(&ScenarioParams::new(ScenarioKind::Doorway, 6, 5, 2).seed(11)).unwrap();
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);

        let custom = r#"{
            "kind": "custom",
            "map": ["....", ".##.", "...."],
            "agents": [{"start": [0, 0], "goal": [2, 3], "incentive": 2}]
        }"#;
        let c = Scenario::from_json(custom).unwrap();
        assert_eq!(c.grid.width(), 4);
        assert_eq!(c.n_obstacles(), 2);
        assert_eq!(c.grid.to_ascii(), "....\n.##.\n....\n");
    }

    #[test]
    fn ascii_rejects_ragged_rows() {
        assert!(GridWorld::from_ascii("...\n..\n").is_err());
        assert!(GridWorld::from_ascii("..x\n").is_err());
    }
}
