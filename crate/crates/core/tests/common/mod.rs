//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use strategic_mapf::world::{AgentState, Cell, GridWorld, Scenario, ScenarioKind};

pub fn ri(n: i64) -> BigRational {
    BigRational::from(BigInt::from(n))
}

pub fn rq(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Shortest-path distances by Dijkstra with unit weights, written against
/// raw obstacle lookups rather than the grid's neighbor iterator.
pub fn dijkstra(grid: &GridWorld, goal: Cell) -> Vec<Option<u32>> {
    let (w, h) = (grid.width() as i32, grid.height() as i32);
    let idx = |c: Cell| (c.row * w + c.col) as usize;
    let mut dist = vec![None; (w * h) as usize];
    let mut heap = BinaryHeap::from([Reverse((0u32, goal.row, goal.col))]);
    while let Some(Reverse((d, r, c))) = heap.pop() {
        let cell = Cell::new(r, c);
        if dist[idx(cell)].is_some() {
            continue;
        }
        dist[idx(cell)] = Some(d);
        for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
            let (nr, nc) = (r + dr, c + dc);
            if nr < 0 || nc < 0 || nr >= h || nc >= w || grid.is_obstacle(Cell::new(nr, nc)) {
                continue;
            }
            if dist[idx(Cell::new(nr, nc))].is_none() {
                heap.push(Reverse((d + 1, nr, nc)));
            }
        }
    }
    dist
}

/// All permutations of `0..k` (Heap's algorithm).
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn heap(n: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if n <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..n - 1 {
            heap(n - 1, a, out);
            if n.is_multiple_of(2) {
                a.swap(i, n - 1);
            } else {
                a.swap(0, n - 1);
            }
        }
        heap(n - 1, a, out);
    }
    let mut a: Vec<usize> = (0..k).collect();
    let mut out = Vec::new();
    heap(k, &mut a, &mut out);
    out
}

/// `max over turn assignments of sum v_i * alpha_turn(i)`.
pub fn brute_force_welfare(values: &[BigRational], alpha: &[BigRational]) -> BigRational {
    permutations(values.len())
        .into_iter()
        .map(|p| {
            p.iter().enumerate().fold(ri(0), |acc, (i, &turn)| {
                acc + values[i].clone() * alpha[turn].clone()
            })
        })
        .max()
        .unwrap()
}

/// The payment formula written out term by term with 1-based indices and
/// zero padding past the last bid and turn.
pub fn textbook_payment(
    sorted_bids: &[BigRational],
    alpha: &[BigRational],
    q: usize,
) -> BigRational {
    let k = sorted_bids.len();
    let b = |j: usize| {
        if j <= k {
            sorted_bids[j - 1].clone()
        } else {
            ri(0)
        }
    };
    let a = |j: usize| if j <= k { alpha[j - 1].clone() } else { ri(0) };
    (q..=k).fold(ri(0), |acc, j| acc + b(j + 1) * (a(j) - a(j + 1)))
}

/// Optimal sum of arrival times for unit-cost, unit-step agents that stay
/// at their goal once finished. Dijkstra over joint states
/// `(positions, finished)`; every unfinished agent pays 1 per tick and an
/// agent standing on its goal may finish at no cost. Vertex collisions and
/// swaps are forbidden, including against finished agents.
pub fn joint_optimal_soc(grid: &GridWorld, starts: &[Cell], goals: &[Cell]) -> Option<u64> {
    let n = starts.len();
    type State = (Vec<Cell>, u32);
    let full = (1u32 << n) - 1;
    let mut best: HashMap<State, u64> = HashMap::new();
    let mut heap = BinaryHeap::new();
    best.insert((starts.to_vec(), 0), 0);
    heap.push(Reverse((0u64, starts.to_vec(), 0u32)));
    let moves = |c: Cell| -> Vec<Cell> {
        let mut v = vec![c];
        for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
            let nc = Cell::new(c.row + dr, c.col + dc);
            if grid.in_bounds(nc) && !grid.is_obstacle(nc) {
                v.push(nc);
            }
        }
        v
    };
    while let Some(Reverse((cost, pos, done))) = heap.pop() {
        if done == full {
            return Some(cost);
        }
        if best.get(&(pos.clone(), done)).is_some_and(|&b| b < cost) {
            continue;
        }
        let mut relax =
            |next: State, c: u64, heap: &mut BinaryHeap<Reverse<(u64, Vec<Cell>, u32)>>| {
                if best.get(&next).is_none_or(|&b| c < b) {
                    best.insert(next.clone(), c);
                    heap.push(Reverse((c, next.0, next.1)));
                }
            };
        for i in 0..n {
            if done & (1 << i) == 0 && pos[i] == goals[i] {
                relax((pos.clone(), done | (1 << i)), cost, &mut heap);
            }
        }
        let active: Vec<usize> = (0..n).filter(|&i| done & (1 << i) == 0).collect();
        let step_cost = active.len() as u64;
        let mut choice = pos.clone();
        // Joint moves of the active agents, enumerated depth-first.
        fn rec(
            k: usize,
            active: &[usize],
            pos: &[Cell],
            choice: &mut Vec<Cell>,
            moves: &dyn Fn(Cell) -> Vec<Cell>,
            out: &mut Vec<Vec<Cell>>,
        ) {
            if k == active.len() {
                out.push(choice.clone());
                return;
            }
            let i = active[k];
            for m in moves(pos[i]) {
                choice[i] = m;
                rec(k + 1, active, pos, choice, moves, out);
            }
            choice[i] = pos[i];
        }
        let mut nexts = Vec::new();
        rec(0, &active, &pos, &mut choice, &moves, &mut nexts);
        for next in nexts {
            let mut ok = true;
            'pairs: for a in 0..n {
                for b in a + 1..n {
                    if next[a] == next[b] || (next[a] == pos[b] && next[b] == pos[a]) {
                        ok = false;
                        break 'pairs;
                    }
                }
            }
            if ok {
                relax((next, done), cost + step_cost, &mut heap);
            }
        }
    }
    None
}

/// `n` agents with distinct random starts and distinct random goals on an
/// open `w x h` grid, unit incentives.
pub fn random_open_scenario(w: usize, h: usize, n: usize, seed: u64) -> Scenario {
    let grid = GridWorld::new(w, h).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: Vec<Cell> = grid.free_cells().collect();
    cells.shuffle(&mut rng);
    let starts = cells[..n].to_vec();
    cells.shuffle(&mut rng);
    let goals = cells[..n].to_vec();
    let agents = (0..n)
        .map(|i| AgentState::new(i, starts[i], goals[i], 1))
        .collect();
    Scenario::from_parts(grid, agents, ScenarioKind::Custom, 0, seed).unwrap()
}

/// The two-agent crossing: one agent heads down column 2, the other right
/// along row 2, both with incentive 3, meeting at (2, 2).
pub fn crossing_scenario() -> Scenario {
    let grid = GridWorld::new(5, 5).unwrap();
    let agents = vec![
        AgentState::new(0, Cell::new(0, 2), Cell::new(4, 2), 3),
        AgentState::new(1, Cell::new(2, 0), Cell::new(2, 4), 3),
    ];
    Scenario::from_parts(grid, agents, ScenarioKind::Custom, 0, 0).unwrap()
}
