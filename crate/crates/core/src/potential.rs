//! Per-goal potential maps: exact shortest-path distance to the goal for every
//! free cell, computed by a breadth-first flood outward from the goal.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

use crate::world::{AgentState, Cell, GridWorld};

pub const UNREACHABLE: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PotentialError {
    #[error("goal {0} is not a free cell")]
    GoalNotFree(Cell),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PotentialMap {
    goal: Cell,
    width: usize,
    height: usize,
    values: Vec<u32>,
}

impl PotentialMap {
    pub fn goal(&self) -> Cell {
        self.goal
    }

    /// Distance to the goal, or `None` for obstacles, out-of-bounds and
    /// unreachable cells.
    pub fn get(&self, cell: Cell) -> Option<u32> {
        if cell.row < 0
            || cell.col < 0
            || cell.row as usize >= self.height
            || cell.col as usize >= self.width
        {
            return None;
        }
        match self.values[cell.row as usize * self.width + cell.col as usize] {
            UNREACHABLE => None,
            v => Some(v),
        }
    }

    /// Raw row-major values with [`UNREACHABLE`] sentinels.
    pub fn values(&self) -> &[u32] {
        &self.values
    }

    /// Debug dump: one CSV row per grid row, `-1` for unreachable cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.height {
            for c in 0..self.width {
                if c > 0 {
                    out.push(',');
                }
                match self.values[r * self.width + c] {
                    UNREACHABLE => out.push_str("-1"),
                    v => write!(out, "{v}").unwrap(),
                }
            }
            out.push('\n');
        }
        out
    }
}

pub fn build_potential_map(grid: &GridWorld, goal: Cell) -> Result<PotentialMap, PotentialError> {
    if !grid.is_free(goal) {
        return Err(PotentialError::GoalNotFree(goal));
    }
    let mut values = vec![UNREACHABLE; grid.width() * grid.height()];
    let mut queue = VecDeque::new();
    values[grid.index(goal)] = 0;
    queue.push_back(goal);
    while let Some(cell) = queue.pop_front() {
        let next = values[grid.index(cell)] + 1;
        for n in grid.free_neighbors(cell) {
            let slot = &mut values[grid.index(n)];
            if *slot == UNREACHABLE {
                *slot = next;
                queue.push_back(n);
            }
        }
    }
    Ok(PotentialMap {
        goal,
        width: grid.width(),
        height: grid.height(),
        values,
    })
}

/// One potential map per distinct goal, looked up per agent.
#[derive(Debug, Clone)]
pub struct PotentialSet {
    maps: BTreeMap<Cell, PotentialMap>,
}

impl PotentialSet {
    pub fn for_agents(grid: &GridWorld, agents: &[AgentState]) -> Result<Self, PotentialError> {
        let mut maps = BTreeMap::new();
        for a in agents {
            if let std::collections::btree_map::Entry::Vacant(e) = maps.entry(a.goal) {
                e.insert(build_potential_map(grid, a.goal)?);
            }
        }
        Ok(PotentialSet { maps })
    }

    pub fn for_goal(&self, goal: Cell) -> Option<&PotentialMap> {
        self.maps.get(&goal)
    }

    /// Panics if the agent's goal was not registered at construction.
    pub fn for_agent(&self, agent: &AgentState) -> &PotentialMap {
        &self.maps[&agent.goal]
    }
}
