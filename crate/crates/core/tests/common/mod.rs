//! Reference implementations shared by the integration tests. Everything
//! here is written against plain coordinates and closed-form rules so it
//! does not reuse the library's planner or inference code.

#![allow(dead_code)]

use std::collections::HashMap;

use tomgrid::grid::{Cell, GridConfig};

pub const MOVES: [(i32, i32); 5] = [(0, -1), (0, 1), (-1, 0), (1, 0), (0, 0)];

/// 3×3 grid with a goal in every top-row cell.
pub fn tiny3() -> GridConfig {
    GridConfig {
        width: 3,
        height: 3,
        goal_cells: vec![Cell::new(0, 0), Cell::new(1, 0), Cell::new(2, 0)],
        human_start_cells: vec![Cell::new(0, 2), Cell::new(2, 2)],
        agent_spawn_region: vec![Cell::new(1, 1)],
        blocked_cells: vec![],
    }
}

#[derive(Debug, Clone, Copy)]
pub enum RefAgent {
    Stationary,
    Random,
    Toward((i32, i32)),
    Chasing,
}

pub struct RefWorld {
    pub w: i32,
    pub h: i32,
    pub blocked: Vec<(i32, i32)>,
}

impl RefWorld {
    pub fn from_config(c: &GridConfig) -> Self {
        RefWorld {
            w: c.width,
            h: c.height,
            blocked: c.blocked_cells.iter().map(|b| (b.x, b.y)).collect(),
        }
    }

    pub fn free(&self, p: (i32, i32)) -> bool {
        p.0 >= 0 && p.1 >= 0 && p.0 < self.w && p.1 < self.h && !self.blocked.contains(&p)
    }

    /// Indices into `MOVES` that stay on free cells.
    pub fn legal(&self, p: (i32, i32)) -> Vec<usize> {
        (0..5).filter(|&i| self.free(step(p, i))).collect()
    }

    /// Agent move distribution as (move index, probability).
    pub fn agent_moves(
        &self,
        kind: RefAgent,
        agent: (i32, i32),
        human: (i32, i32),
    ) -> Vec<(usize, f64)> {
        let legal = self.legal(agent);
        let greedy = |t: (i32, i32)| -> Vec<(usize, f64)> {
            if agent == t {
                return vec![(4, 1.0)];
            }
            let cands: Vec<usize> = legal.iter().copied().filter(|&i| i != 4).collect();
            let best = cands
                .iter()
                .map(|&i| dist(step(agent, i), t))
                .min()
                .unwrap();
            let keep: Vec<usize> = cands
                .into_iter()
                .filter(|&i| dist(step(agent, i), t) == best)
                .collect();
            let p = 1.0 / keep.len() as f64;
            keep.into_iter().map(|i| (i, p)).collect()
        };
        match kind {
            RefAgent::Stationary => vec![(4, 1.0)],
            RefAgent::Random => {
                let p = 1.0 / legal.len() as f64;
                legal.into_iter().map(|i| (i, p)).collect()
            }
            RefAgent::Toward(t) => greedy(t),
            RefAgent::Chasing => greedy(human),
        }
    }
}

pub fn step(p: (i32, i32), i: usize) -> (i32, i32) {
    (p.0 + MOVES[i].0, p.1 + MOVES[i].1)
}

pub fn dist(a: (i32, i32), b: (i32, i32)) -> i32 {
    (a.0 - b.0).abs() + (a.1 - b.1).abs()
}

pub struct Rewards {
    pub goal: f64,
    pub cost: f64,
    pub gamma: f64,
    pub collision: f64,
}

type MemoKey = (usize, (i32, i32), (i32, i32));

/// Finite-horizon expectimax over alternating human and agent turns,
/// memoized on (human turns left, human, agent).
pub struct Expectimax<'a> {
    pub world: &'a RefWorld,
    pub agent: RefAgent,
    pub goal: (i32, i32),
    pub r: Rewards,
    memo: HashMap<MemoKey, f64>,
}

impl<'a> Expectimax<'a> {
    pub fn new(world: &'a RefWorld, agent: RefAgent, goal: (i32, i32), r: Rewards) -> Self {
        Expectimax {
            world,
            agent,
            goal,
            r,
            memo: HashMap::new(),
        }
    }

    pub fn value(&mut self, depth: usize, human: (i32, i32), agent: (i32, i32)) -> f64 {
        if depth == 0 {
            return 0.0;
        }
        if let Some(v) = self.memo.get(&(depth, human, agent)) {
            return *v;
        }
        let mut best = f64::NEG_INFINITY;
        for i in self.world.legal(human) {
            let h2 = step(human, i);
            let q = if h2 == agent {
                self.r.cost + self.r.collision
            } else if h2 == self.goal {
                self.r.cost + self.r.goal
            } else {
                let mut ev = 0.0;
                for (j, p) in self.world.agent_moves(self.agent, agent, h2) {
                    let a2 = step(agent, j);
                    ev += p * if a2 == h2 {
                        self.r.collision
                    } else {
                        self.r.gamma * self.value(depth - 1, h2, a2)
                    };
                }
                self.r.cost + self.r.gamma * ev
            };
            best = best.max(q);
        }
        self.memo.insert((depth, human, agent), best);
        best
    }
}

/// Linear-space Boltzmann probability of move `chosen` among `q` (None for
/// illegal moves), without max subtraction.
pub fn softmax_prob(q: &[Option<f64>], chosen: usize, beta: f64) -> f64 {
    let z: f64 = q.iter().flatten().map(|v| (beta * v).exp()).sum();
    (beta * q[chosen].expect("chosen move is legal")).exp() / z
}

/// One-sided 95% Wilson lower bound on a proportion.
pub fn wilson_lower(p: f64, n: usize) -> f64 {
    let z = 1.6448536269514722;
    let n = n as f64;
    let denom = 1.0 + z * z / n;
    let centre = p + z * z / (2.0 * n);
    let margin = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt();
    (centre - margin) / denom
}
