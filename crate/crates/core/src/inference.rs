//! Bayesian inference over attributed agent models and human goals.
//!
//! Each observed human action contributes its Boltzmann probability under
//! every hypothesis; posteriors are products of these per-step terms with the
//! prior, kept in log space and renormalized with log-sum-exp. The human's
//! model and goal are assumed fixed for the whole trajectory.

use std::io::Write;

use serde::Serialize;

use crate::agent::{AgentModel, ModelKind};
use crate::error::{Error, Result};
use crate::grid::{legal_actions, Action, Cell, EnvState};
use crate::planner::{boltzmann_log_policy, TableBank};
use crate::trajectory::{Step, Trajectory};

/// Two hypotheses whose log posteriors differ by at most this much are tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalized distribution over a finite, duplicate-free hypothesis list.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief<H> {
    support: Vec<H>,
    log_weights: Vec<f64>,
}

impl<H: Clone + PartialEq> Belief<H> {
    pub fn uniform(support: Vec<H>) -> Result<Self> {
        let n = support.len();
        Self::from_log_weights(support, vec![0.0; n])
    }

    /// Normalizes arbitrary (unnormalized) log weights.
    pub fn from_log_weights(support: Vec<H>, log_weights: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::Belief("empty hypothesis support".into()));
        }
        if support.len() != log_weights.len() {
            return Err(Error::Belief("support and weight lengths differ".into()));
        }
        for (i, h) in support.iter().enumerate() {
            if support[..i].contains(h) {
                return Err(Error::Belief("duplicate hypothesis in support".into()));
            }
        }
        if log_weights
            .iter()
            .any(|w| w.is_nan() || *w == f64::INFINITY)
        {
            return Err(Error::Belief("non-finite log weight".into()));
        }
        let z = log_sum_exp(&log_weights);
        if !z.is_finite() {
            return Err(Error::Belief("every hypothesis has zero weight".into()));
        }
        Ok(Belief {
            support,
            log_weights: log_weights.into_iter().map(|w| w - z).collect(),
        })
    }

    pub fn from_probs(support: Vec<H>, probs: &[f64]) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Belief(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        Self::from_log_weights(support, probs.iter().map(|p| p.ln()).collect())
    }

    pub fn point_mass(support: Vec<H>, at: &H) -> Result<Self> {
        let lw = support
            .iter()
            .map(|h| if h == at { 0.0 } else { f64::NEG_INFINITY })
            .collect();
        Self::from_log_weights(support, lw)
    }

    pub fn support(&self) -> &[H] {
        &self.support
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    pub fn prob(&self, h: &H) -> f64 {
        self.support
            .iter()
            .position(|x| x == h)
            .map_or(0.0, |i| self.log_weights[i].exp())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&H, f64)> {
        self.support
            .iter()
            .zip(self.log_weights.iter().map(|w| w.exp()))
    }

    /// Bayes update with a per-hypothesis log likelihood.
    pub fn update<F>(&self, mut log_likelihood: F) -> Result<Self>
    where
        F: FnMut(&H) -> Result<f64>,
    {
        let mut lw = Vec::with_capacity(self.len());
        for (h, w) in self.support.iter().zip(&self.log_weights) {
            // Zero-prior hypotheses stay at zero without consulting the likelihood.
            if *w == f64::NEG_INFINITY {
                lw.push(f64::NEG_INFINITY);
                continue;
            }
            let ll = log_likelihood(h)?;
            if ll.is_nan() || ll == f64::INFINITY {
                return Err(Error::Belief("non-finite step likelihood".into()));
            }
            lw.push(w + ll);
        }
        Self::from_log_weights(self.support.clone(), lw)
    }

    /// Sums probability mass by a key, keeping first-seen key order.
    pub fn marginal<K: Clone + PartialEq>(&self, key: impl Fn(&H) -> K) -> Belief<K> {
        let mut keys: Vec<K> = Vec::new();
        let mut parts: Vec<Vec<f64>> = Vec::new();
        for (h, w) in self.support.iter().zip(&self.log_weights) {
            let k = key(h);
            match keys.iter().position(|x| *x == k) {
                Some(i) => parts[i].push(*w),
                None => {
                    keys.push(k);
                    parts.push(vec![*w]);
                }
            }
        }
        let lw = parts.iter().map(|p| log_sum_exp(p)).collect();
        Belief::from_log_weights(keys, lw).expect("marginal of a normalized belief is normalized")
    }
}

/// `log p(a_h | <s, m>, g)` under the bank's rationality.
pub fn step_log_likelihood(
    bank: &TableBank,
    model: &AgentModel,
    goal: Cell,
    s: &EnvState,
    a_h: Action,
) -> Result<f64> {
    if !legal_actions(bank.config(), s.human)?.contains(a_h) {
        return Err(Error::IllegalAction {
            action: a_h,
            cell: s.human,
        });
    }
    let tables = bank.get(model, goal)?;
    let lp = boltzmann_log_policy(tables, s, bank.rationality())?[a_h.index()];
    debug_assert!(lp.is_finite());
    Ok(lp)
}

pub fn trajectory_log_likelihood(
    bank: &TableBank,
    model: &AgentModel,
    goal: Cell,
    steps: &[Step],
) -> Result<f64> {
    steps
        .iter()
        .map(|st| step_log_likelihood(bank, model, goal, &st.state, st.action))
        .sum()
}

pub type JointHypothesis = (AgentModel, Cell);

/// Model posterior with the goal known.
pub fn update_model_posterior(
    belief: &Belief<AgentModel>,
    bank: &TableBank,
    goal: Cell,
    s: &EnvState,
    a_h: Action,
) -> Result<Belief<AgentModel>> {
    belief.update(|m| step_log_likelihood(bank, m, goal, s, a_h))
}

pub fn update_joint_posterior(
    belief: &Belief<JointHypothesis>,
    bank: &TableBank,
    s: &EnvState,
    a_h: Action,
) -> Result<Belief<JointHypothesis>> {
    belief.update(|(m, g)| step_log_likelihood(bank, m, *g, s, a_h))
}

pub fn goal_posterior(joint: &Belief<JointHypothesis>) -> Belief<Cell> {
    joint.marginal(|(_, g)| *g)
}

pub fn model_posterior_marginal(joint: &Belief<JointHypothesis>) -> Belief<AgentModel> {
    joint.marginal(|(m, _)| *m)
}

/// Goal update that treats the agent as a fixed obstacle, i.e. always uses
/// the stationary model's tables.
pub fn baseline_goal_posterior(
    bank: &TableBank,
    belief: &Belief<Cell>,
    s: &EnvState,
    a_h: Action,
) -> Result<Belief<Cell>> {
    belief.update(|g| step_log_likelihood(bank, &AgentModel::Stationary, *g, s, a_h))
}

/// Uniform prior over the four model kinds for a trial starting at `human_start`.
pub fn model_prior(human_start: Cell) -> Belief<AgentModel> {
    Belief::uniform(AgentModel::hypotheses(human_start)).expect("four distinct models")
}

/// Uniform prior over models × goals, model-major.
pub fn joint_prior(human_start: Cell, goals: &[Cell]) -> Result<Belief<JointHypothesis>> {
    let support = AgentModel::hypotheses(human_start)
        .into_iter()
        .flat_map(|m| goals.iter().map(move |g| (m, *g)))
        .collect();
    Belief::uniform(support)
}

/// Batch posterior over a whole step sequence from summed log likelihoods.
pub fn batch_model_posterior(
    prior: &Belief<AgentModel>,
    bank: &TableBank,
    goal: Cell,
    steps: &[Step],
) -> Result<Belief<AgentModel>> {
    prior.update(|m| trajectory_log_likelihood(bank, m, goal, steps))
}

pub fn batch_joint_posterior(
    prior: &Belief<JointHypothesis>,
    bank: &TableBank,
    steps: &[Step],
) -> Result<Belief<JointHypothesis>> {
    prior.update(|(m, g)| trajectory_log_likelihood(bank, m, *g, steps))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedModel {
    pub model: AgentModel,
    pub posterior: f64,
    /// 1-based; tied models share a rank.
    pub rank: usize,
}

/// Final model posterior sorted by decreasing probability, with ties grouped.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ranking {
    pub entries: Vec<RankedModel>,
    #[serde(skip)]
    groups: Vec<std::ops::Range<usize>>,
}

impl Ranking {
    pub fn from_belief(belief: &Belief<AgentModel>) -> Self {
        let mut order: Vec<usize> = (0..belief.len()).collect();
        let lw = belief.log_weights();
        // Stable sort keeps the support order inside tie groups.
        order.sort_by(|&a, &b| lw[b].total_cmp(&lw[a]));
        let mut groups: Vec<std::ops::Range<usize>> = Vec::new();
        for pos in 0..order.len() {
            match groups.last_mut() {
                Some(g) if tied(lw[order[pos]], lw[order[g.start]]) => g.end = pos + 1,
                _ => groups.push(pos..pos + 1),
            }
        }
        let mut entries = Vec::with_capacity(order.len());
        for g in &groups {
            for pos in g.clone() {
                let i = order[pos];
                entries.push(RankedModel {
                    model: belief.support()[i],
                    posterior: lw[i].exp(),
                    rank: g.start + 1,
                });
            }
        }
        Ranking { entries, groups }
    }

    pub fn top(&self) -> &[RankedModel] {
        &self.entries[self.groups[0].clone()]
    }

    /// Fraction of the top-`k` slots credited to `truth`, with tied groups
    /// sharing the slots they straddle evenly.
    pub fn top_k_credit(&self, truth: ModelKind, k: usize) -> f64 {
        for g in &self.groups {
            if !self.entries[g.clone()]
                .iter()
                .any(|e| e.model.kind() == truth)
            {
                continue;
            }
            if g.end <= k {
                return 1.0;
            }
            if g.start >= k {
                return 0.0;
            }
            return (k - g.start) as f64 / g.len() as f64;
        }
        0.0
    }

    /// Top-1 classification split evenly across the leading tie group.
    pub fn top1_split(&self) -> Vec<(ModelKind, f64)> {
        let top = self.top();
        let share = 1.0 / top.len() as f64;
        top.iter().map(|e| (e.model.kind(), share)).collect()
    }
}

fn tied(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= TIE_TOLERANCE
}

/// Known-goal model classification of a whole trajectory from a uniform prior.
pub fn classify_model(
    trajectory: &Trajectory,
    bank: &TableBank,
    known_goal: Cell,
) -> Result<Ranking> {
    let prior = model_prior(trajectory.meta.human_start);
    let mut belief = prior;
    for st in &trajectory.steps {
        belief = update_model_posterior(&belief, bank, known_goal, &st.state, st.action)?;
    }
    Ok(Ranking::from_belief(&belief))
}

/// One line of a posterior trace file.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TraceRecord {
    pub trial_id: String,
    /// Number of observed actions folded into `weights`.
    pub step: usize,
    pub track: String,
    pub labels: Vec<String>,
    pub weights: Vec<f64>,
}

impl TraceRecord {
    pub fn from_belief<H: Clone + PartialEq>(
        trial_id: &str,
        step: usize,
        track: &str,
        belief: &Belief<H>,
        label: impl Fn(&H) -> String,
    ) -> Self {
        TraceRecord {
            trial_id: trial_id.to_string(),
            step,
            track: track.to_string(),
            labels: belief.support().iter().map(label).collect(),
            weights: belief.probs(),
        }
    }
}

pub fn write_trace<W: Write>(records: &[TraceRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn joint_label((m, g): &JointHypothesis) -> String {
    format!("{}@{},{}", m.kind(), g.x, g.y)
}

pub fn model_label(m: &AgentModel) -> String {
    m.kind().name().to_string()
}

pub fn goal_label(g: &Cell) -> String {
    format!("{},{}", g.x, g.y)
}

/// Per-step beliefs for one trajectory on both tracks: known-goal model
/// posterior and the joint model × goal posterior.
#[derive(Debug, Clone)]
pub struct PosteriorTrace {
    pub models: Vec<Belief<AgentModel>>,
    pub joint: Vec<Belief<JointHypothesis>>,
}

impl PosteriorTrace {
    pub fn compute(trajectory: &Trajectory, bank: &TableBank, known_goal: Cell) -> Result<Self> {
        let start = trajectory.meta.human_start;
        let mut models = vec![model_prior(start)];
        let mut joint = vec![joint_prior(start, &bank.config().goal_cells)?];
        for st in &trajectory.steps {
            let m = update_model_posterior(
                models.last().unwrap(),
                bank,
                known_goal,
                &st.state,
                st.action,
            )?;
            let j = update_joint_posterior(joint.last().unwrap(), bank, &st.state, st.action)?;
            models.push(m);
            joint.push(j);
        }
        Ok(PosteriorTrace { models, joint })
    }

    pub fn records(&self, trial_id: &str) -> Vec<TraceRecord> {
        let mut out = Vec::new();
        for (i, (m, j)) in self.models.iter().zip(&self.joint).enumerate() {
            out.push(TraceRecord::from_belief(
                trial_id,
                i,
                "model",
                m,
                model_label,
            ));
            out.push(TraceRecord::from_belief(
                trial_id,
                i,
                "joint",
                j,
                joint_label,
            ));
            out.push(TraceRecord::from_belief(
                trial_id,
                i,
                "goal",
                &goal_posterior(j),
                goal_label,
            ));
        }
        out
    }
}
