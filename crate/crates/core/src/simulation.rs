//! Synthetic Boltzmann-rational humans and the desk-scale study analyses.
//!
//! A synthetic participant plays every condition's trials with a known
//! attributed model and goal, so classification accuracy, the confusion
//! matrix and goal-probability curves can be measured against ground truth.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{sample_agent_action, AgentModel, ModelKind};
use crate::error::{Error, Result};
use crate::grid::{apply_agent_move, apply_human_move, Cell, EnvState, GridConfig, Status};
use crate::inference::{
    baseline_goal_posterior, classify_model, goal_posterior, joint_prior,
    trajectory_log_likelihood, update_joint_posterior, Belief, JointHypothesis, Ranking,
};
use crate::planner::{
    all_trial_pairs, boltzmann_policy, RewardParams, TableBank, TableCache, DEFAULT_TOLERANCE,
};
use crate::trajectory::{Outcome, Step, Trajectory, TrajectoryMeta};

pub const DEFAULT_STEP_CAP: usize = 200;
pub const CURVE_BUCKETS: usize = 21;

fn default_trials_per_condition() -> usize {
    5
}
fn default_participants() -> usize {
    25
}
fn default_human_beta() -> f64 {
    1.0
}
fn default_seed() -> u64 {
    2024
}
fn default_step_cap() -> usize {
    DEFAULT_STEP_CAP
}
fn default_max_attempts() -> usize {
    1000
}
fn default_tol() -> f64 {
    DEFAULT_TOLERANCE
}
fn default_conditions() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}
fn default_tuning_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_conditions")]
    pub conditions: Vec<ModelKind>,
    #[serde(default = "default_trials_per_condition")]
    pub trials_per_condition: usize,
    #[serde(default = "default_participants")]
    pub participants: usize,
    /// Rationality of the simulated humans; inference uses `params.rationality`.
    #[serde(default = "default_human_beta")]
    pub human_beta: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub params: RewardParams,
    #[serde(default = "default_step_cap")]
    pub step_cap: usize,
    /// Re-simulation budget per trial for collided or truncated runs.
    #[serde(default = "default_max_attempts")]
    pub max_attempts: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Share of participants held out for reward tuning.
    #[serde(default = "default_tuning_fraction")]
    pub tuning_fraction: f64,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            grid: GridConfig::default(),
            conditions: default_conditions(),
            trials_per_condition: default_trials_per_condition(),
            participants: default_participants(),
            human_beta: default_human_beta(),
            seed: default_seed(),
            params: RewardParams::default(),
            step_cap: default_step_cap(),
            max_attempts: default_max_attempts(),
            tol: default_tol(),
            tuning_fraction: default_tuning_fraction(),
        }
    }
}

impl ExperimentPlan {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let plan: ExperimentPlan = toml::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.params.validate()?;
        if self.conditions.is_empty() {
            return Err(Error::Plan("no conditions".into()));
        }
        if self.trials_per_condition == 0 || self.participants == 0 {
            return Err(Error::Plan(
                "need at least one participant and one trial per condition".into(),
            ));
        }
        if self.human_beta.is_nan() || self.human_beta < 0.0 {
            return Err(Error::Plan(format!(
                "human beta must be >= 0, got {}",
                self.human_beta
            )));
        }
        if self.step_cap == 0 || self.max_attempts == 0 {
            return Err(Error::Plan(
                "step cap and attempt budget must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.tuning_fraction) {
            return Err(Error::Plan("tuning fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn trial_count(&self) -> usize {
        self.participants * self.conditions.len() * self.trials_per_condition
    }

    /// Every (model, goal) pair simulation and classification may consult.
    pub fn required_pairs(&self) -> Vec<(AgentModel, Cell)> {
        all_trial_pairs(&self.grid)
    }

    /// Bank for this plan, solving (or loading) whatever is missing.
    pub fn bank(&self, cache: Option<&TableCache>) -> Result<TableBank> {
        let mut bank = TableBank::new(self.grid.clone(), self.params, self.tol)?;
        bank.ensure(&self.required_pairs(), cache)?;
        Ok(bank)
    }

    fn slot(&self, trial: usize) -> (usize, ModelKind) {
        let per_participant = self.conditions.len() * self.trials_per_condition;
        let participant = trial / per_participant;
        let condition = self.conditions[(trial % per_participant) / self.trials_per_condition];
        (participant, condition)
    }

    /// Trial setup for one attempt; goal, human start and agent start are
    /// drawn uniformly.
    pub fn trial_spec(&self, trial: usize, attempt: usize) -> TrialSpec {
        let (participant, condition) = self.slot(trial);
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(self.seed, trial as u64, attempt as u64));
        let g = &self.grid;
        let goal = g.goal_cells[rng.gen_range(0..g.goal_cells.len())];
        let human_start = g.human_start_cells[rng.gen_range(0..g.human_start_cells.len())];
        let agent_start = g.agent_spawn_region[rng.gen_range(0..g.agent_spawn_region.len())];
        TrialSpec {
            trial_id: format!("p{participant:03}-t{trial:05}-a{attempt}"),
            participant,
            condition,
            goal,
            human_start,
            agent_start,
            seed: rng.next_u64(),
        }
    }
}

/// SplitMix64 finalizer over the combined indices.
fn derive_seed(base: u64, trial: u64, attempt: u64) -> u64 {
    let mut z = base
        ^ trial.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ attempt.wrapping_mul(0xD1B5_4A32_D192_ED03).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrialSpec {
    pub trial_id: String,
    pub participant: usize,
    pub condition: ModelKind,
    pub goal: Cell,
    pub human_start: Cell,
    pub agent_start: Cell,
    pub seed: u64,
}

impl TrialSpec {
    pub fn true_model(&self) -> AgentModel {
        self.condition.instantiate(self.human_start)
    }
}

/// Alternates Boltzmann human moves (rationality `beta`) with agent moves
/// sampled from the true model until the goal, a collision or the step cap.
pub fn simulate_human_trajectory(
    bank: &TableBank,
    spec: &TrialSpec,
    beta: f64,
    step_cap: usize,
) -> Result<Trajectory> {
    if spec.human_start == spec.agent_start {
        return Err(Error::Domain(
            "human and agent must start on different cells".into(),
        ));
    }
    let config = bank.config();
    let model = spec.true_model();
    let tables = bank.get(&model, spec.goal)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut traj = Trajectory::new(TrajectoryMeta {
        trial_id: spec.trial_id.clone(),
        condition: spec.condition,
        goal: spec.goal,
        human_start: spec.human_start,
        agent_start: spec.agent_start,
        seed: spec.seed,
        outcome: Outcome::Truncated,
    });
    let mut state = EnvState::active(spec.human_start, spec.agent_start);
    for _ in 0..step_cap {
        let a_h = boltzmann_policy(tables, &state, beta)?.sample(&mut rng);
        traj.steps.push(Step { state, action: a_h });
        let mid = apply_human_move(config, &state, a_h, spec.goal)?;
        match mid.status {
            Status::GoalReached => {
                traj.meta.outcome = Outcome::Success;
                return Ok(traj);
            }
            Status::Collided => {
                traj.meta.outcome = Outcome::Collided;
                return Ok(traj);
            }
            Status::Active => {}
        }
        let a_r = sample_agent_action(config, &model, &mid, &mut rng)?;
        state = apply_agent_move(config, &mid, a_r)?;
        if state.status == Status::Collided {
            traj.meta.outcome = Outcome::Collided;
            return Ok(traj);
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone)]
pub struct SimulatedTrial {
    pub trial: usize,
    pub participant: usize,
    pub attempts: usize,
    pub collisions: usize,
    pub truncations: usize,
    pub trajectory: Trajectory,
}

/// Runs every trial of the plan, re-simulating collided or truncated
/// attempts until one succeeds.
pub fn simulate_plan(plan: &ExperimentPlan, bank: &TableBank) -> Result<Vec<SimulatedTrial>> {
    plan.validate()?;
    for (m, g) in plan.required_pairs() {
        bank.get(&m, g)?;
    }
    (0..plan.trial_count())
        .into_par_iter()
        .map(|trial| {
            let (mut collisions, mut truncations) = (0, 0);
            for attempt in 0..plan.max_attempts {
                let spec = plan.trial_spec(trial, attempt);
                let t = simulate_human_trajectory(bank, &spec, plan.human_beta, plan.step_cap)?;
                match t.meta.outcome {
                    Outcome::Success => {
                        return Ok(SimulatedTrial {
                            trial,
                            participant: spec.participant,
                            attempts: attempt + 1,
                            collisions,
                            truncations,
                            trajectory: t,
                        })
                    }
                    Outcome::Collided => collisions += 1,
                    _ => truncations += 1,
                }
            }
            Err(Error::Plan(format!(
                "trial {trial} produced no successful run in {} attempts",
                plan.max_attempts
            )))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrialRow {
    pub trial_id: String,
    pub participant: usize,
    pub condition: ModelKind,
    pub goal_x: i32,
    pub goal_y: i32,
    pub steps: usize,
    pub attempts: usize,
    pub predicted: String,
    pub top1_credit: f64,
    pub top2_credit: f64,
    pub true_model_posterior: f64,
    pub final_goal_prob_joint: Option<f64>,
    pub final_goal_prob_baseline: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExperimentReport {
    pub trials: usize,
    pub attempts: usize,
    pub collisions: usize,
    pub truncations: usize,
    pub top1_accuracy: f64,
    pub top2_accuracy: f64,
    /// Row and column order of `confusion`.
    pub labels: Vec<ModelKind>,
    /// `confusion[true][predicted]`, fractional under tie splitting.
    pub confusion: Vec<Vec<f64>>,
    /// Method name → mean correct-goal probability at 0%, 5%, …, 100% observed.
    pub goal_curves: BTreeMap<String, Vec<f64>>,
    #[serde(skip)]
    pub rows: Vec<TrialRow>,
}

impl ExperimentReport {
    /// Off-diagonal confusion mass inside {stationary, fixed_goal} and
    /// {random, chasing}, and across those two clusters.
    pub fn cluster_masses(&self) -> (f64, f64) {
        let cluster = |k: ModelKind| matches!(k, ModelKind::Stationary | ModelKind::FixedGoal);
        let (mut within, mut across) = (0.0, 0.0);
        for (i, ti) in self.labels.iter().enumerate() {
            for (j, tj) in self.labels.iter().enumerate() {
                if i == j {
                    continue;
                }
                if cluster(*ti) == cluster(*tj) {
                    within += self.confusion[i][j];
                } else {
                    across += self.confusion[i][j];
                }
            }
        }
        (within, across)
    }

    pub fn confusion_total(&self) -> f64 {
        self.confusion.iter().flatten().sum()
    }

    /// Writes `report.json`, `trials.csv` and `curves.csv` into `dir`.
    pub fn write_files(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(dir.join("report.json"), json)?;

        let mut w = csv::Writer::from_path(dir.join("trials.csv"))?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("curves.csv"))?;
        w.write_record(["method", "percent", "mean_correct_goal_prob"])?;
        for (method, values) in &self.goal_curves {
            for (b, v) in values.iter().enumerate() {
                w.write_record([method.clone(), (b * 5).to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn empty_report(sims: &[SimulatedTrial]) -> ExperimentReport {
    let n = ModelKind::ALL.len();
    ExperimentReport {
        trials: sims.len(),
        attempts: sims.iter().map(|s| s.attempts).sum(),
        collisions: sims.iter().map(|s| s.collisions).sum(),
        truncations: sims.iter().map(|s| s.truncations).sum(),
        top1_accuracy: 0.0,
        top2_accuracy: 0.0,
        labels: ModelKind::ALL.to_vec(),
        confusion: vec![vec![0.0; n]; n],
        goal_curves: BTreeMap::new(),
        rows: sims
            .iter()
            .map(|s| {
                let m = &s.trajectory.meta;
                TrialRow {
                    trial_id: m.trial_id.clone(),
                    participant: s.participant,
                    condition: m.condition,
                    goal_x: m.goal.x,
                    goal_y: m.goal.y,
                    steps: s.trajectory.len(),
                    attempts: s.attempts,
                    predicted: String::new(),
                    top1_credit: 0.0,
                    top2_credit: 0.0,
                    true_model_posterior: 0.0,
                    final_goal_prob_joint: None,
                    final_goal_prob_baseline: None,
                }
            })
            .collect(),
    }
}

/// Known-goal classification of already simulated trials into `report`.
fn classify_into(
    report: &mut ExperimentReport,
    sims: &[SimulatedTrial],
    bank: &TableBank,
) -> Result<()> {
    let rankings: Vec<Ranking> = sims
        .par_iter()
        .map(|s| classify_model(&s.trajectory, bank, s.trajectory.meta.goal))
        .collect::<Result<_>>()?;
    let (mut top1, mut top2) = (0.0, 0.0);
    for ((s, ranking), row) in sims.iter().zip(&rankings).zip(report.rows.iter_mut()) {
        let truth = s.trajectory.meta.condition;
        let c1 = ranking.top_k_credit(truth, 1);
        let c2 = ranking.top_k_credit(truth, 2);
        top1 += c1;
        top2 += c2;
        for (kind, share) in ranking.top1_split() {
            report.confusion[truth.index()][kind.index()] += share;
        }
        row.predicted = ranking
            .top()
            .iter()
            .map(|e| e.model.kind().name())
            .collect::<Vec<_>>()
            .join("|");
        row.top1_credit = c1;
        row.top2_credit = c2;
        row.true_model_posterior = ranking
            .entries
            .iter()
            .find(|e| e.model.kind() == truth)
            .map_or(0.0, |e| e.posterior);
    }
    let n = sims.len().max(1) as f64;
    report.top1_accuracy = top1 / n;
    report.top2_accuracy = top2 / n;
    Ok(())
}

pub fn run_classification_experiment(
    plan: &ExperimentPlan,
    bank: &TableBank,
) -> Result<ExperimentReport> {
    let sims = simulate_plan(plan, bank)?;
    classify_trials(&sims, bank)
}

/// Classification report for trials simulated elsewhere, e.g. classified
/// with a different bank than the one that generated them.
pub fn classify_trials(sims: &[SimulatedTrial], bank: &TableBank) -> Result<ExperimentReport> {
    let mut report = empty_report(sims);
    classify_into(&mut report, sims, bank)?;
    Ok(report)
}

/// Probability of the true goal after 0, 1, …, T observed steps under the
/// joint method starting from `prior`.
pub fn joint_goal_trace(
    trajectory: &Trajectory,
    bank: &TableBank,
    prior: &Belief<JointHypothesis>,
) -> Result<Vec<f64>> {
    let goal = trajectory.meta.goal;
    let mut belief = prior.clone();
    let mut out = vec![goal_posterior(&belief).prob(&goal)];
    for st in &trajectory.steps {
        belief = update_joint_posterior(&belief, bank, &st.state, st.action)?;
        out.push(goal_posterior(&belief).prob(&goal));
    }
    Ok(out)
}

/// Same as [`joint_goal_trace`] for the obstacle baseline.
pub fn baseline_goal_trace(trajectory: &Trajectory, bank: &TableBank) -> Result<Vec<f64>> {
    let goal = trajectory.meta.goal;
    let mut belief = Belief::uniform(bank.config().goal_cells.clone())?;
    let mut out = vec![belief.prob(&goal)];
    for st in &trajectory.steps {
        belief = baseline_goal_posterior(bank, &belief, &st.state, st.action)?;
        out.push(belief.prob(&goal));
    }
    Ok(out)
}

/// Resamples a per-step trace onto 5% buckets: bucket `b` takes the value
/// after `round(b/20 · T)` observed steps.
pub fn bucketize(trace: &[f64]) -> [f64; CURVE_BUCKETS] {
    let t = trace.len() - 1;
    let mut out = [0.0; CURVE_BUCKETS];
    for (b, slot) in out.iter_mut().enumerate() {
        let step = (b * t + (CURVE_BUCKETS - 1) / 2) / (CURVE_BUCKETS - 1);
        *slot = trace[step];
    }
    out
}

fn mean_curve(traces: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = vec![0.0; CURVE_BUCKETS];
    for t in traces {
        for (a, v) in acc.iter_mut().zip(bucketize(t)) {
            *a += v;
        }
    }
    let n = traces.len().max(1) as f64;
    acc.into_iter().map(|a| a / n).collect()
}

pub const JOINT_METHOD: &str = "joint";
pub const BASELINE_METHOD: &str = "baseline";

/// Classification plus correct-goal curves for the joint method and the
/// obstacle baseline, both from uniform goal priors.
pub fn run_goal_inference_experiment(
    plan: &ExperimentPlan,
    bank: &TableBank,
) -> Result<ExperimentReport> {
    let sims = simulate_plan(plan, bank)?;
    let mut report = classify_trials(&sims, bank)?;
    let goals = &plan.grid.goal_cells;
    let traces: Vec<(Vec<f64>, Vec<f64>)> = sims
        .par_iter()
        .map(|s| {
            let prior = joint_prior(s.trajectory.meta.human_start, goals)?;
            Ok((
                joint_goal_trace(&s.trajectory, bank, &prior)?,
                baseline_goal_trace(&s.trajectory, bank)?,
            ))
        })
        .collect::<Result<_>>()?;
    for (row, (j, b)) in report.rows.iter_mut().zip(&traces) {
        row.final_goal_prob_joint = j.last().copied();
        row.final_goal_prob_baseline = b.last().copied();
    }
    let (joint, baseline): (Vec<_>, Vec<_>) = traces.into_iter().unzip();
    report
        .goal_curves
        .insert(JOINT_METHOD.into(), mean_curve(&joint));
    report
        .goal_curves
        .insert(BASELINE_METHOD.into(), mean_curve(&baseline));
    Ok(report)
}

/// Classification accuracy re-measured with the collision penalty set to each
/// value in `penalties`; humans are simulated and classified under the same
/// penalty.
pub fn run_collision_sweep(
    plan: &ExperimentPlan,
    penalties: &[f64],
    cache: Option<&TableCache>,
) -> Result<Vec<(f64, ExperimentReport)>> {
    penalties
        .iter()
        .map(|&c| {
            let p = ExperimentPlan {
                params: RewardParams {
                    collision_penalty: c,
                    ..plan.params
                },
                ..plan.clone()
            };
            let bank = p.bank(cache)?;
            Ok((c, run_classification_experiment(&p, &bank)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningGrid {
    pub goal_rewards: Vec<f64>,
    pub action_costs: Vec<f64>,
    pub discounts: Vec<f64>,
}

impl TuningGrid {
    pub fn points(&self, base: &RewardParams) -> Vec<RewardParams> {
        let mut out = Vec::new();
        for &goal_reward in &self.goal_rewards {
            for &action_cost in &self.action_costs {
                for &discount in &self.discounts {
                    out.push(RewardParams {
                        goal_reward,
                        action_cost,
                        discount,
                        ..*base
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuningResult {
    pub best: RewardParams,
    /// Total held-out log likelihood per grid point, in grid order.
    pub scores: Vec<(RewardParams, f64)>,
}

/// Grid point maximizing the held-out log likelihood under each trajectory's
/// known (model, goal); ties go to the earliest point in grid order.
pub fn grid_search_tune(
    config: &GridConfig,
    held_out: &[Trajectory],
    grid: &TuningGrid,
    base: &RewardParams,
    tol: f64,
    cache: Option<&TableCache>,
) -> Result<TuningResult> {
    if held_out.is_empty() {
        return Err(Error::Domain("no held-out trajectories".into()));
    }
    let points = grid.points(base);
    if points.is_empty() {
        return Err(Error::Domain("empty tuning grid".into()));
    }
    let mut pairs: Vec<(AgentModel, Cell)> = Vec::new();
    for t in held_out {
        let p = (t.meta.true_model(), t.meta.goal);
        if !pairs.contains(&p) {
            pairs.push(p);
        }
    }
    let scores: Vec<(RewardParams, f64)> = points
        .par_iter()
        .map(|params| {
            let mut bank = TableBank::new(config.clone(), *params, tol)?;
            bank.ensure(&pairs, cache)?;
            let total = held_out
                .iter()
                .map(|t| {
                    trajectory_log_likelihood(&bank, &t.meta.true_model(), t.meta.goal, &t.steps)
                })
                .sum::<Result<f64>>()?;
            Ok((*params, total))
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, (_, ll)) in scores.iter().enumerate() {
        if *ll > scores[best].1 {
            best = i;
        }
    }
    Ok(TuningResult {
        best: scores[best].0,
        scores,
    })
}

/// Splits simulated trials by participant: the first `fraction` of
/// participants (rounded up) go to tuning, the rest to testing.
pub fn tuning_split(
    plan: &ExperimentPlan,
    sims: &[SimulatedTrial],
) -> (Vec<Trajectory>, Vec<Trajectory>) {
    let cut = (plan.tuning_fraction * plan.participants as f64).ceil() as usize;
    let (mut tune, mut test) = (Vec::new(), Vec::new());
    for s in sims {
        if s.participant < cut {
            tune.push(s.trajectory.clone());
        } else {
            test.push(s.trajectory.clone());
        }
    }
    (tune, test)
}
