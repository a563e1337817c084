//! Turn-based value iteration over interactive states `<s, m>`.
//!
//! For a fixed attributed agent model `m` and goal `g` the human plans over
//! full turns: its own move followed by the agent's reply drawn from `m`.
//!
//! ```text
//! Q(s, a_h) = R(s, a_h, -) + γ · RV(s')          s' = human move
//! RV(s')    = Σ p(a_r | s', m) [R(s', -, a_r) + γ · V(s'')]
//! V(s)      = max_a Q(s, a)
//! ```
//!
//! Goal and collision rewards are paid on the transition into the terminal
//! state; terminal states are worth zero.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{agent_policy, AgentModel};
use crate::dist::ActionDistribution;
use crate::error::{Error, Result};
use crate::grid::{
    apply_agent_move, apply_human_move, legal_actions, Action, Cell, EnvState, GridConfig,
    StateSpace, Status,
};

pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardParams {
    /// Paid once when the human enters its goal.
    pub goal_reward: f64,
    /// Paid on every human move, including `Stay`.
    pub action_cost: f64,
    pub discount: f64,
    /// Paid when either mover steps onto the other.
    pub collision_penalty: f64,
    /// Inverse temperature of the human's action choice.
    pub rationality: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            goal_reward: 30.0,
            action_cost: -3.0,
            discount: 0.95,
            collision_penalty: -60.0,
            rationality: 1.0,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidParams(m));
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return fail(format!(
                "discount must lie in (0, 1), got {}",
                self.discount
            ));
        }
        if !self.rationality.is_finite() || self.rationality < 0.0 {
            return fail(format!(
                "rationality must be finite and >= 0, got {}",
                self.rationality
            ));
        }
        if self.action_cost.is_nan() || self.action_cost > 0.0 {
            return fail(format!(
                "action cost must be <= 0, got {}",
                self.action_cost
            ));
        }
        if self.collision_penalty.is_nan() || self.collision_penalty > 0.0 {
            return fail(format!(
                "collision penalty must be <= 0, got {}",
                self.collision_penalty
            ));
        }
        if !self.goal_reward.is_finite() || self.goal_reward <= 0.0 {
            return fail(format!(
                "goal reward must be finite and > 0, got {}",
                self.goal_reward
            ));
        }
        if !self.action_cost.is_finite() || !self.collision_penalty.is_finite() {
            return fail("rewards must be finite".into());
        }
        Ok(())
    }
}

const TERMINAL: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Edge {
    reward: f64,
    next: u32,
}

/// Deterministic successor structure for one (model, goal) pair.
struct Compiled {
    active: Vec<usize>,
    /// `None` marks an illegal human action.
    human: Vec<[Option<Edge>; Action::COUNT]>,
    agent_start: Vec<u32>,
    agent_edges: Vec<(f64, Edge)>,
}

fn index_or_terminal(space: &StateSpace, s: &EnvState) -> u32 {
    match s.status {
        Status::Active => space.index_of(s).expect("active successor is indexed") as u32,
        _ => TERMINAL,
    }
}

impl Compiled {
    fn build(
        config: &GridConfig,
        space: &StateSpace,
        model: &AgentModel,
        goal: Cell,
        p: &RewardParams,
    ) -> Result<Self> {
        let len = space.table_len();
        let mut human = vec![[None; Action::COUNT]; len];
        let mut agent_start = vec![0u32; len + 1];
        let mut agent_edges = Vec::new();
        let mut active = Vec::new();
        for idx in 0..len {
            agent_start[idx] = agent_edges.len() as u32;
            let Some(s) = space.state_at(idx) else {
                continue;
            };
            active.push(idx);
            for a in legal_actions(config, s.human)?.iter() {
                let next = apply_human_move(config, &s, a, goal)?;
                let reward = p.action_cost
                    + match next.status {
                        Status::GoalReached => p.goal_reward,
                        Status::Collided => p.collision_penalty,
                        Status::Active => 0.0,
                    };
                human[idx][a.index()] = Some(Edge {
                    reward,
                    next: index_or_terminal(space, &next),
                });
            }
            for (a, prob) in agent_policy(config, model, &s)?.iter() {
                if prob == 0.0 {
                    continue;
                }
                let next = apply_agent_move(config, &s, a)?;
                let reward = if next.status == Status::Collided {
                    p.collision_penalty
                } else {
                    0.0
                };
                agent_edges.push((
                    prob,
                    Edge {
                        reward,
                        next: index_or_terminal(space, &next),
                    },
                ));
            }
        }
        agent_start[len] = agent_edges.len() as u32;
        Ok(Compiled {
            active,
            human,
            agent_start,
            agent_edges,
        })
    }

    fn agent_value(&self, idx: usize, v: &[f64], gamma: f64) -> f64 {
        let (lo, hi) = (
            self.agent_start[idx] as usize,
            self.agent_start[idx + 1] as usize,
        );
        self.agent_edges[lo..hi]
            .iter()
            .map(|(p, e)| p * (e.reward + gamma * lookup(v, e.next)))
            .sum()
    }

    fn human_row(&self, idx: usize, rv: &[f64], gamma: f64) -> [f64; Action::COUNT] {
        let mut row = [f64::NEG_INFINITY; Action::COUNT];
        for (slot, edge) in row.iter_mut().zip(&self.human[idx]) {
            if let Some(e) = edge {
                *slot = e.reward + gamma * lookup(rv, e.next);
            }
        }
        row
    }
}

fn lookup(values: &[f64], next: u32) -> f64 {
    if next == TERMINAL {
        0.0
    } else {
        values[next as usize]
    }
}

fn row_max(row: &[f64; Action::COUNT]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Converged value functions for one (agent model, goal) hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTables {
    pub model: AgentModel,
    pub goal: Cell,
    space: StateSpace,
    v: Vec<f64>,
    rv: Vec<f64>,
    #[serde(with = "q_rows")]
    q: Vec<[f64; Action::COUNT]>,
    pub residual: f64,
    pub sweeps: usize,
}

impl ValueTables {
    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    fn index(&self, s: &EnvState) -> Result<usize> {
        if !s.is_active() {
            return Err(Error::NotActive(s.status));
        }
        self.space
            .index_of(s)
            .ok_or_else(|| Error::Domain(format!("state {s:?} is not in the table's state space")))
    }

    /// Value with the human to move.
    pub fn v(&self, s: &EnvState) -> Result<f64> {
        Ok(self.v[self.index(s)?])
    }

    /// Value with the agent to move.
    pub fn rv(&self, s: &EnvState) -> Result<f64> {
        Ok(self.rv[self.index(s)?])
    }

    /// `None` for actions that are illegal at `s`.
    pub fn q(&self, s: &EnvState, a: Action) -> Result<Option<f64>> {
        let x = self.q[self.index(s)?][a.index()];
        Ok(x.is_finite().then_some(x))
    }

    /// Q-values for all actions; illegal actions hold `-inf`.
    pub fn q_row(&self, s: &EnvState) -> Result<[f64; Action::COUNT]> {
        Ok(self.q[self.index(s)?])
    }

    /// Largest change a further Bellman sweep would make to `V` or `RV`.
    pub fn bellman_residual(&self, config: &GridConfig, params: &RewardParams) -> Result<f64> {
        let mut vi = ValueIteration::new(config, self.model, self.goal, params)?;
        vi.v.clone_from(&self.v);
        vi.rv.clone_from(&self.rv);
        Ok(vi.sweep())
    }
}

mod q_rows {
    use super::Action;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(
        rows: &[[f64; Action::COUNT]],
        ser: S,
    ) -> Result<S::Ok, S::Error> {
        let opt: Vec<[Option<f64>; Action::COUNT]> = rows
            .iter()
            .map(|r| r.map(|x| x.is_finite().then_some(x)))
            .collect();
        opt.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        de: D,
    ) -> Result<Vec<[f64; Action::COUNT]>, D::Error> {
        let opt = Vec::<[Option<f64>; Action::COUNT]>::deserialize(de)?;
        Ok(opt
            .into_iter()
            .map(|r| r.map(|x| x.unwrap_or(f64::NEG_INFINITY)))
            .collect())
    }
}

/// Synchronous value iteration, exposed sweep by sweep.
pub struct ValueIteration {
    model: AgentModel,
    goal: Cell,
    gamma: f64,
    space: StateSpace,
    compiled: Compiled,
    v: Vec<f64>,
    rv: Vec<f64>,
    q: Vec<[f64; Action::COUNT]>,
    sweeps: usize,
    residual: f64,
}

impl ValueIteration {
    pub fn new(
        config: &GridConfig,
        model: AgentModel,
        goal: Cell,
        params: &RewardParams,
    ) -> Result<Self> {
        config.validate()?;
        params.validate()?;
        if config.goal_index(goal).is_none() {
            return Err(Error::Domain(format!(
                "{goal} is not a configured goal cell"
            )));
        }
        if let AgentModel::FixedGoal { target } = model {
            if !config.is_free(target) {
                return Err(Error::Domain(format!(
                    "fixed-goal target {target} is not a free cell"
                )));
            }
        }
        let space = StateSpace::new(config);
        let compiled = Compiled::build(config, &space, &model, goal, params)?;
        let len = space.table_len();
        Ok(ValueIteration {
            model,
            goal,
            gamma: params.discount,
            space,
            compiled,
            v: vec![0.0; len],
            rv: vec![0.0; len],
            q: vec![[f64::NEG_INFINITY; Action::COUNT]; len],
            sweeps: 0,
            residual: f64::INFINITY,
        })
    }

    /// One composite agent-turn then human-turn update. Returns the sup-norm
    /// change over `V` and `RV`.
    pub fn sweep(&mut self) -> f64 {
        let c = &self.compiled;
        let gamma = self.gamma;
        let mut rv = vec![0.0; self.rv.len()];
        for &i in &c.active {
            rv[i] = c.agent_value(i, &self.v, gamma);
        }
        let mut v = vec![0.0; self.v.len()];
        let mut residual: f64 = 0.0;
        for &i in &c.active {
            let row = c.human_row(i, &rv, gamma);
            v[i] = row_max(&row);
            self.q[i] = row;
            residual = residual
                .max((v[i] - self.v[i]).abs())
                .max((rv[i] - self.rv[i]).abs());
        }
        self.v = v;
        self.rv = rv;
        self.sweeps += 1;
        self.residual = residual;
        residual
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn run(mut self, tol: f64, max_sweeps: usize) -> Result<ValueTables> {
        if tol.is_nan() || tol <= 0.0 {
            return Err(Error::Domain(format!(
                "tolerance must be positive, got {tol}"
            )));
        }
        while self.sweeps < max_sweeps {
            if self.sweep() <= tol {
                return Ok(self.into_tables());
            }
        }
        Err(Error::Convergence {
            pair: format!("({}, {})", self.model, self.goal),
            sweeps: self.sweeps,
            residual: self.residual,
        })
    }

    fn into_tables(self) -> ValueTables {
        ValueTables {
            model: self.model,
            goal: self.goal,
            space: self.space,
            v: self.v,
            rv: self.rv,
            q: self.q,
            residual: self.residual,
            sweeps: self.sweeps,
        }
    }
}

pub fn solve(
    config: &GridConfig,
    model: AgentModel,
    goal: Cell,
    params: &RewardParams,
    tol: f64,
) -> Result<ValueTables> {
    ValueIteration::new(config, model, goal, params)?.run(tol, MAX_SWEEPS)
}

/// Log of the Boltzmann action probabilities at `s`; `-inf` on illegal actions.
pub fn boltzmann_log_policy(
    tables: &ValueTables,
    s: &EnvState,
    beta: f64,
) -> Result<[f64; Action::COUNT]> {
    let q = tables.q_row(s)?;
    let max = row_max(&q);
    let mut out = [f64::NEG_INFINITY; Action::COUNT];
    let mut z = 0.0;
    for (o, &x) in out.iter_mut().zip(&q) {
        if x.is_finite() {
            *o = beta * (x - max);
            z += o.exp();
        }
    }
    let log_z = z.ln();
    for o in out.iter_mut().filter(|o| o.is_finite()) {
        *o -= log_z;
    }
    Ok(out)
}

/// `P(a) ∝ exp(β · Q(s, a))` over the human's legal actions.
pub fn boltzmann_policy(
    tables: &ValueTables,
    s: &EnvState,
    beta: f64,
) -> Result<ActionDistribution> {
    let logp = boltzmann_log_policy(tables, s, beta)?;
    Ok(ActionDistribution::from_probs(logp.map(|l| {
        if l.is_finite() {
            l.exp()
        } else {
            0.0
        }
    })))
}

/// On-disk cache of solved tables keyed by a content hash of everything the
/// solution depends on. Rationality is excluded: it never enters the Bellman
/// system.
#[derive(Debug, Clone)]
pub struct TableCache {
    dir: PathBuf,
}

#[derive(Serialize)]
struct CacheKey<'a> {
    format: u32,
    config: &'a GridConfig,
    model: &'a AgentModel,
    goal: Cell,
    goal_reward: f64,
    action_cost: f64,
    discount: f64,
    collision_penalty: f64,
    tol: f64,
}

impl TableCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        TableCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(
        config: &GridConfig,
        model: &AgentModel,
        goal: Cell,
        params: &RewardParams,
        tol: f64,
    ) -> String {
        let key = CacheKey {
            format: 1,
            config,
            model,
            goal,
            goal_reward: params.goal_reward,
            action_cost: params.action_cost,
            discount: params.discount,
            collision_penalty: params.collision_penalty,
            tol,
        };
        let bytes = serde_json::to_vec(&key).expect("cache key serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn load(&self, key: &str) -> Result<Option<ValueTables>> {
        let path = self.path(key);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read(&path)?;
        Ok(Some(serde_json::from_slice(&text)?))
    }

    pub fn store(&self, key: &str, tables: &ValueTables) -> Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        let tmp = self.dir.join(format!("{key}.json.tmp"));
        std::fs::write(&tmp, serde_json::to_vec(tables)?)?;
        std::fs::rename(tmp, self.path(key))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairSource {
    /// Already held in memory.
    Skipped,
    /// Read from the disk cache.
    Loaded,
    Solved,
}

#[derive(Debug, Clone)]
pub struct PairReport {
    pub model: AgentModel,
    pub goal: Cell,
    pub source: PairSource,
    pub sweeps: usize,
    pub residual: f64,
}

/// Solved tables for a set of (model, goal) hypotheses sharing one grid and
/// one reward parameterization.
#[derive(Debug, Clone)]
pub struct TableBank {
    config: GridConfig,
    params: RewardParams,
    tol: f64,
    tables: HashMap<(AgentModel, Cell), Arc<ValueTables>>,
}

impl TableBank {
    pub fn new(config: GridConfig, params: RewardParams, tol: f64) -> Result<Self> {
        config.validate()?;
        params.validate()?;
        Ok(TableBank {
            config,
            params,
            tol,
            tables: HashMap::new(),
        })
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn params(&self) -> &RewardParams {
        &self.params
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn rationality(&self) -> f64 {
        self.params.rationality
    }

    /// Same tables, different inference-time rationality.
    pub fn with_rationality(&self, beta: f64) -> Result<Self> {
        let params = RewardParams {
            rationality: beta,
            ..self.params
        };
        params.validate()?;
        Ok(TableBank {
            params,
            ..self.clone()
        })
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn contains(&self, model: &AgentModel, goal: Cell) -> bool {
        self.tables.contains_key(&(*model, goal))
    }

    pub fn get(&self, model: &AgentModel, goal: Cell) -> Result<&ValueTables> {
        self.tables
            .get(&(*model, goal))
            .map(Arc::as_ref)
            .ok_or_else(|| Error::MissingHypothesis(format!("({model}, {goal})")))
    }

    pub fn pairs(&self) -> Vec<(AgentModel, Cell)> {
        let mut keys: Vec<_> = self.tables.keys().copied().collect();
        keys.sort();
        keys
    }

    /// Makes sure every pair is available, solving missing ones in parallel
    /// and consulting `cache` first when given.
    pub fn ensure(
        &mut self,
        pairs: &[(AgentModel, Cell)],
        cache: Option<&TableCache>,
    ) -> Result<Vec<PairReport>> {
        let mut wanted: Vec<(AgentModel, Cell)> = Vec::new();
        for p in pairs {
            if !wanted.contains(p) {
                wanted.push(*p);
            }
        }
        let (config, params, tol) = (&self.config, &self.params, self.tol);
        let held = &self.tables;
        let results: Vec<Result<(PairReport, Option<Arc<ValueTables>>)>> = wanted
            .par_iter()
            .map(|&(model, goal)| {
                if let Some(t) = held.get(&(model, goal)) {
                    return Ok((report(t, PairSource::Skipped), None));
                }
                let key = TableCache::key(config, &model, goal, params, tol);
                if let Some(cache) = cache {
                    if let Some(t) = cache.load(&key)? {
                        if t.model == model && t.goal == goal {
                            return Ok((report(&t, PairSource::Loaded), Some(Arc::new(t))));
                        }
                    }
                }
                let t = solve(config, model, goal, params, tol)?;
                if let Some(cache) = cache {
                    cache.store(&key, &t)?;
                }
                Ok((report(&t, PairSource::Solved), Some(Arc::new(t))))
            })
            .collect();
        let mut reports = Vec::with_capacity(results.len());
        for r in results {
            let (rep, tables) = r?;
            if let Some(t) = tables {
                self.tables.insert((rep.model, rep.goal), t);
            }
            reports.push(rep);
        }
        Ok(reports)
    }
}

fn report(t: &ValueTables, source: PairSource) -> PairReport {
    PairReport {
        model: t.model,
        goal: t.goal,
        source,
        sweeps: t.sweeps,
        residual: t.residual,
    }
}

/// Tables for the cartesian product `models × goals`.
pub fn solve_bank(
    config: &GridConfig,
    models: &[AgentModel],
    goals: &[Cell],
    params: &RewardParams,
) -> Result<TableBank> {
    if models.is_empty() || goals.is_empty() {
        return Err(Error::Domain(
            "solve_bank needs at least one model and one goal".into(),
        ));
    }
    let mut bank = TableBank::new(config.clone(), *params, DEFAULT_TOLERANCE)?;
    let pairs: Vec<_> = models
        .iter()
        .flat_map(|m| goals.iter().map(move |g| (*m, *g)))
        .collect();
    bank.ensure(&pairs, None)?;
    Ok(bank)
}

/// Every hypothesis an experiment over `config` can touch: the four model
/// kinds instantiated for each human start, crossed with every goal.
pub fn all_trial_pairs(config: &GridConfig) -> Vec<(AgentModel, Cell)> {
    let mut models: Vec<AgentModel> = Vec::new();
    for start in &config.human_start_cells {
        for m in AgentModel::hypotheses(*start) {
            if !models.contains(&m) {
                models.push(m);
            }
        }
    }
    models
        .iter()
        .flat_map(|m| config.goal_cells.iter().map(move |g| (*m, *g)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::enumerate_states;
    use proptest::prelude::*;

    fn tiny() -> GridConfig {
        GridConfig {
            width: 3,
            height: 3,
            goal_cells: vec![Cell::new(0, 0), Cell::new(2, 0)],
            human_start_cells: vec![Cell::new(0, 2)],
            agent_spawn_region: vec![Cell::new(1, 1)],
            blocked_cells: vec![],
        }
    }

    #[test]
    fn one_step_to_goal_is_analytic() {
        // Human one step below the goal, stationary agent far away: entering
        // the goal ends the episode, so only the immediate reward counts.
        let cfg = tiny();
        let p = RewardParams::default();
        let t = solve(&cfg, AgentModel::Stationary, Cell::new(0, 0), &p, 1e-9).unwrap();
        let s = EnvState::active(Cell::new(0, 1), Cell::new(2, 2));
        assert_eq!(t.q(&s, Action::Up).unwrap(), Some(27.0));
        assert_eq!(t.v(&s).unwrap(), 27.0);
        assert_eq!(
            t.q(
                &EnvState::active(Cell::new(0, 0), Cell::new(2, 2)),
                Action::Left
            )
            .unwrap(),
            None
        );
    }

    #[test]
    fn v_is_max_q_and_residual_within_tol() {
        let cfg = tiny();
        let p = RewardParams::default();
        for model in [AgentModel::Random, AgentModel::Chasing] {
            let t = solve(&cfg, model, Cell::new(2, 0), &p, 1e-6).unwrap();
            assert!(t.residual <= 1e-6);
            for s in enumerate_states(&cfg) {
                let row = t.q_row(&s).unwrap();
                assert_eq!(t.v(&s).unwrap(), row_max(&row));
            }
            assert!(t.bellman_residual(&cfg, &p).unwrap() <= 1e-6);
        }
    }

    #[test]
    fn residuals_never_increase() {
        let cfg = GridConfig::default();
        let p = RewardParams::default();
        let mut vi = ValueIteration::new(&cfg, AgentModel::Random, Cell::new(4, 0), &p).unwrap();
        let mut prev = vi.sweep();
        for _ in 0..150 {
            let r = vi.sweep();
            assert!(r <= prev + 1e-12, "residual rose from {prev} to {r}");
            prev = r;
        }
    }

    #[test]
    fn tables_ignore_rationality() {
        let cfg = tiny();
        let a = solve(
            &cfg,
            AgentModel::Random,
            Cell::new(0, 0),
            &RewardParams::default(),
            1e-6,
        )
        .unwrap();
        let p = RewardParams {
            rationality: 7.5,
            ..RewardParams::default()
        };
        let b = solve(&cfg, AgentModel::Random, Cell::new(0, 0), &p, 1e-6).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn convergence_cap_reports_residual() {
        let cfg = tiny();
        let vi = ValueIteration::new(
            &cfg,
            AgentModel::Random,
            Cell::new(0, 0),
            &RewardParams::default(),
        )
        .unwrap();
        match vi.run(1e-9, 3) {
            Err(Error::Convergence {
                sweeps, residual, ..
            }) => {
                assert_eq!(sweeps, 3);
                assert!(residual > 1e-9);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_inputs_rejected() {
        let cfg = tiny();
        let bad = RewardParams {
            discount: 1.2,
            ..RewardParams::default()
        };
        assert!(matches!(
            solve(&cfg, AgentModel::Random, Cell::new(0, 0), &bad, 1e-6),
            Err(Error::InvalidParams(_))
        ));
        assert!(solve(
            &cfg,
            AgentModel::Random,
            Cell::new(1, 0),
            &RewardParams::default(),
            1e-6
        )
        .is_err());
        assert!(solve(
            &cfg,
            AgentModel::Random,
            Cell::new(0, 0),
            &RewardParams::default(),
            0.0
        )
        .is_err());
    }

    fn softmax_reference(q: &[f64], beta: f64) -> Vec<f64> {
        let w: Vec<f64> = q.iter().map(|x| (beta * x).exp()).collect();
        let z: f64 = w.iter().sum();
        w.iter().map(|x| x / z).collect()
    }

    #[test]
    fn boltzmann_matches_direct_softmax() {
        // Corner (0,0) leaves Down, Right, Stay legal; set two of them apart by 3.
        let cfg = tiny();
        let mut t = solve(
            &cfg,
            AgentModel::Stationary,
            Cell::new(2, 0),
            &RewardParams::default(),
            1e-6,
        )
        .unwrap();
        let s = EnvState::active(Cell::new(0, 0), Cell::new(2, 2));
        let i = t.space.index_of(&s).unwrap();
        t.q[i] = [
            f64::NEG_INFINITY,
            3.0,
            f64::NEG_INFINITY,
            0.0,
            f64::NEG_INFINITY,
        ];
        let d = boltzmann_policy(&t, &s, 1.0).unwrap();
        let reference = softmax_reference(&[3.0, 0.0], 1.0);
        let e3 = 3f64.exp();
        assert!((d.prob(Action::Down) - e3 / (e3 + 1.0)).abs() < 1e-15);
        assert!((d.prob(Action::Down) - reference[0]).abs() < 1e-15);
        assert!((d.prob(Action::Right) - 0.0474258731775668).abs() < 1e-12);
        assert!((d.prob(Action::Down) - 0.9525741268224334).abs() < 1e-12);
        assert_eq!(d.prob(Action::Up), 0.0);

        let flat = boltzmann_policy(&t, &s, 0.0).unwrap();
        assert_eq!(flat.prob(Action::Down), 0.5);
        assert_eq!(flat.prob(Action::Right), 0.5);
    }

    #[test]
    fn argmax_dominates_at_high_beta() {
        let cfg = tiny();
        let t = solve(
            &cfg,
            AgentModel::Chasing,
            Cell::new(0, 0),
            &RewardParams::default(),
            1e-6,
        )
        .unwrap();
        for s in enumerate_states(&cfg) {
            let row = t.q_row(&s).unwrap();
            let max = row_max(&row);
            let best: Vec<usize> = (0..5).filter(|&i| row[i] == max).collect();
            if best.len() != 1 {
                continue;
            }
            let d = boltzmann_policy(&t, &s, 100.0).unwrap();
            let mode = (0..5)
                .max_by(|&a, &b| d.probs()[a].total_cmp(&d.probs()[b]))
                .unwrap();
            assert_eq!(mode, best[0]);
        }
    }

    #[test]
    fn bank_counts_and_cache_hits() {
        let cfg = GridConfig::default();
        let start = cfg.human_start_cells[1];
        let models = AgentModel::hypotheses(start);
        let mut bank =
            solve_bank(&cfg, &models, &cfg.goal_cells, &RewardParams::default()).unwrap();
        assert_eq!(bank.len(), 12);
        let before = bank
            .get(&AgentModel::Chasing, cfg.goal_cells[0])
            .unwrap()
            .clone();
        let pairs: Vec<_> = models
            .iter()
            .flat_map(|m| cfg.goal_cells.iter().map(move |g| (*m, *g)))
            .collect();
        let again = bank.ensure(&pairs, None).unwrap();
        assert!(again.iter().all(|r| r.source == PairSource::Skipped));
        assert_eq!(
            bank.get(&AgentModel::Chasing, cfg.goal_cells[0]).unwrap(),
            &before
        );

        let other = AgentModel::FixedGoal {
            target: cfg.human_start_cells[0],
        };
        bank.ensure(&[(other, cfg.goal_cells[0])], None).unwrap();
        assert_eq!(bank.len(), 13);
        assert_ne!(
            bank.get(&other, cfg.goal_cells[0]).unwrap(),
            bank.get(&models[2], cfg.goal_cells[0]).unwrap()
        );
        assert!(matches!(
            bank.get(&AgentModel::Random, Cell::new(1, 0)),
            Err(Error::MissingHypothesis(_))
        ));
    }

    #[test]
    fn disk_cache_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cache = TableCache::new(dir.path());
        let cfg = tiny();
        let p = RewardParams::default();
        let mut bank = TableBank::new(cfg.clone(), p, 1e-6).unwrap();
        let pairs = [
            (AgentModel::Random, Cell::new(0, 0)),
            (AgentModel::Chasing, Cell::new(2, 0)),
        ];
        let first = bank.ensure(&pairs, Some(&cache)).unwrap();
        assert!(first.iter().all(|r| r.source == PairSource::Solved));
        let mut warm = TableBank::new(cfg, p, 1e-6).unwrap();
        let second = warm.ensure(&pairs, Some(&cache)).unwrap();
        assert!(second.iter().all(|r| r.source == PairSource::Loaded));
        for (m, g) in pairs {
            assert_eq!(warm.get(&m, g).unwrap(), bank.get(&m, g).unwrap());
        }
    }

    #[test]
    fn cache_key_tracks_inputs() {
        let cfg = tiny();
        let p = RewardParams::default();
        let k = TableCache::key(&cfg, &AgentModel::Random, Cell::new(0, 0), &p, 1e-6);
        let beta = RewardParams {
            rationality: 3.0,
            ..p
        };
        assert_eq!(
            k,
            TableCache::key(&cfg, &AgentModel::Random, Cell::new(0, 0), &beta, 1e-6)
        );
        let g = RewardParams {
            goal_reward: 31.0,
            ..p
        };
        assert_ne!(
            k,
            TableCache::key(&cfg, &AgentModel::Random, Cell::new(0, 0), &g, 1e-6)
        );
        assert_ne!(
            k,
            TableCache::key(&cfg, &AgentModel::Chasing, Cell::new(0, 0), &p, 1e-6)
        );
    }

    proptest! {
        #[test]
        fn softmax_shift_invariance(q in proptest::collection::vec(-50.0f64..50.0, 5), c in -1e3f64..1e3, beta in 0.0f64..5.0) {
            let cfg = tiny();
            let mut t = solve(&cfg, AgentModel::Stationary, Cell::new(2, 0), &RewardParams::default(), 1e-3).unwrap();
            let s = EnvState::active(Cell::new(1, 1), Cell::new(2, 2));
            let i = t.space.index_of(&s).unwrap();
            t.q[i] = [q[0], q[1], q[2], q[3], q[4]];
            let a = boltzmann_policy(&t, &s, beta).unwrap();
            t.q[i] = [q[0] + c, q[1] + c, q[2] + c, q[3] + c, q[4] + c];
            let b = boltzmann_policy(&t, &s, beta).unwrap();
            for k in 0..5 {
                prop_assert!((a.probs()[k] - b.probs()[k]).abs() < 1e-12);
            }
            prop_assert!((a.total() - 1.0).abs() < 1e-12);
        }
    }
}
