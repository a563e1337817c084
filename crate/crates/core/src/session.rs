//! Live play: one trial advanced a full turn at a time, with both belief
//! tracks updated after every human move.
//!
//! All randomness (goal and start draws, agent moves) comes from one stream
//! seeded by the session seed, so a session is replayable from its seed and
//! the human's actions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{sample_agent_action, AgentModel, ModelKind};
use crate::error::{Error, Result};
use crate::grid::{
    apply_agent_move, apply_human_move, legal_actions, Action, Cell, EnvState, GridConfig, Status,
};
use crate::inference::{
    goal_posterior, joint_prior, model_posterior_marginal, model_prior, update_joint_posterior,
    update_model_posterior, Belief, JointHypothesis, PosteriorTrace, TraceRecord,
};
use crate::planner::TableBank;
use crate::trajectory::{Outcome, Step, Trajectory, TrajectoryMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionStatus {
    Active,
    Finished(Outcome),
}

impl SessionStatus {
    pub fn is_active(self) -> bool {
        self == SessionStatus::Active
    }

    pub fn name(self) -> &'static str {
        match self {
            SessionStatus::Active => "active",
            SessionStatus::Finished(Outcome::Success) => "success",
            SessionStatus::Finished(Outcome::Collided) => "collided",
            SessionStatus::Finished(Outcome::Truncated) => "truncated",
            SessionStatus::Finished(Outcome::Incomplete) => "incomplete",
        }
    }
}

/// Serialized as one flat word: `active`, or the outcome once finished.
impl Serialize for SessionStatus {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.serialize_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weighted<T> {
    pub label: T,
    pub prob: f64,
}

/// Current beliefs in a flat, label-keyed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BeliefView {
    /// Known-goal model posterior.
    pub models: Vec<Weighted<ModelKind>>,
    /// Goal marginal of the joint posterior.
    pub goals: Vec<Weighted<Cell>>,
    /// Model marginal of the joint posterior.
    pub joint_models: Vec<Weighted<ModelKind>>,
    pub joint: Vec<JointWeight>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointWeight {
    pub model: ModelKind,
    pub goal: Cell,
    pub prob: f64,
}

impl BeliefView {
    pub fn new(models: &Belief<AgentModel>, joint: &Belief<JointHypothesis>) -> Self {
        let kinds = |b: &Belief<AgentModel>| {
            b.iter()
                .map(|(m, p)| Weighted {
                    label: m.kind(),
                    prob: p,
                })
                .collect()
        };
        BeliefView {
            models: kinds(models),
            goals: goal_posterior(joint)
                .iter()
                .map(|(g, p)| Weighted { label: *g, prob: p })
                .collect(),
            joint_models: kinds(&model_posterior_marginal(joint)),
            joint: joint
                .iter()
                .map(|((m, g), p)| JointWeight {
                    model: m.kind(),
                    goal: *g,
                    prob: p,
                })
                .collect(),
        }
    }
}

/// What one call to [`Session::play`] did.
#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    /// State right after the human's move, before the agent responds.
    pub human_state: EnvState,
    /// `None` when the human's move ended the episode.
    pub agent_action: Option<Action>,
    pub state: EnvState,
    pub status: SessionStatus,
}

#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    config: GridConfig,
    condition: ModelKind,
    model: AgentModel,
    goal: Cell,
    seed: u64,
    state: EnvState,
    status: SessionStatus,
    trace: PosteriorTrace,
    trajectory: Trajectory,
    rng: ChaCha8Rng,
}

impl Session {
    /// Draws the goal (unless given), the human start and the agent start
    /// from the session stream. `bank` must hold every trial pair.
    pub fn new(
        id: impl Into<String>,
        bank: &TableBank,
        condition: ModelKind,
        goal: Option<Cell>,
        seed: u64,
    ) -> Result<Self> {
        let config = bank.config().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let goal = match goal {
            Some(g) if config.goal_index(g).is_some() => g,
            Some(g) => return Err(Error::Domain(format!("{g} is not a configured goal"))),
            None => config.goal_cells[rng.gen_range(0..config.goal_cells.len())],
        };
        let human = config.human_start_cells[rng.gen_range(0..config.human_start_cells.len())];
        let agent = config.agent_spawn_region[rng.gen_range(0..config.agent_spawn_region.len())];
        let model = condition.instantiate(human);
        for m in AgentModel::hypotheses(human) {
            for g in &config.goal_cells {
                bank.get(&m, *g)?;
            }
        }
        let id = id.into();
        let trace = PosteriorTrace {
            models: vec![model_prior(human)],
            joint: vec![joint_prior(human, &config.goal_cells)?],
        };
        let trajectory = Trajectory::new(TrajectoryMeta {
            trial_id: id.clone(),
            condition,
            goal,
            human_start: human,
            agent_start: agent,
            seed,
            outcome: Outcome::Incomplete,
        });
        Ok(Session {
            id,
            config,
            condition,
            model,
            goal,
            seed,
            state: EnvState::active(human, agent),
            status: SessionStatus::Active,
            trace,
            trajectory,
            rng,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn condition(&self) -> ModelKind {
        self.condition
    }

    pub fn model(&self) -> AgentModel {
        self.model
    }

    pub fn goal(&self) -> Cell {
        self.goal
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state(&self) -> EnvState {
        self.state
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn model_belief(&self) -> &Belief<AgentModel> {
        self.trace
            .models
            .last()
            .expect("trace starts with the prior")
    }

    pub fn joint_belief(&self) -> &Belief<JointHypothesis> {
        self.trace
            .joint
            .last()
            .expect("trace starts with the prior")
    }

    pub fn beliefs(&self) -> BeliefView {
        BeliefView::new(self.model_belief(), self.joint_belief())
    }

    pub fn trace(&self) -> &PosteriorTrace {
        &self.trace
    }

    pub fn trace_records(&self) -> Vec<TraceRecord> {
        self.trace.records(&self.id)
    }

    pub fn legal_actions(&self) -> Result<Vec<Action>> {
        Ok(legal_actions(&self.config, self.state.human)?
            .iter()
            .collect())
    }

    /// One full turn: the human's move, then (if the episode goes on) one
    /// sampled agent move. Beliefs are updated with the human's action.
    pub fn play(&mut self, bank: &TableBank, action: Action) -> Result<Turn> {
        if let SessionStatus::Finished(outcome) = self.status {
            return Err(Error::Finished(outcome));
        }
        let s = self.state;
        if !legal_actions(&self.config, s.human)?.contains(action) {
            return Err(Error::IllegalAction {
                action,
                cell: s.human,
            });
        }
        let models = update_model_posterior(self.model_belief(), bank, self.goal, &s, action)?;
        let joint = update_joint_posterior(self.joint_belief(), bank, &s, action)?;
        let mid = apply_human_move(&self.config, &s, action, self.goal)?;
        let (agent_action, next) = if mid.is_active() {
            let a_r = sample_agent_action(&self.config, &self.model, &mid, &mut self.rng)?;
            (Some(a_r), apply_agent_move(&self.config, &mid, a_r)?)
        } else {
            (None, mid)
        };

        self.trace.models.push(models);
        self.trace.joint.push(joint);
        self.trajectory.steps.push(Step { state: s, action });
        self.state = next;
        match next.status {
            Status::Active => {}
            Status::GoalReached => self.end(Outcome::Success),
            Status::Collided => self.end(Outcome::Collided),
        }
        Ok(Turn {
            human_state: mid,
            agent_action,
            state: next,
            status: self.status,
        })
    }

    /// Ends the session (as incomplete if still running) and returns the
    /// trajectory record. Finishing twice returns the same record.
    pub fn finish(&mut self) -> &Trajectory {
        if self.status.is_active() {
            self.end(Outcome::Incomplete);
        }
        &self.trajectory
    }

    fn end(&mut self, outcome: Outcome) {
        self.status = SessionStatus::Finished(outcome);
        self.trajectory.meta.outcome = outcome;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::{all_trial_pairs, RewardParams, DEFAULT_TOLERANCE};
    use std::sync::OnceLock;

    fn bank() -> &'static TableBank {
        static BANK: OnceLock<TableBank> = OnceLock::new();
        BANK.get_or_init(|| {
            let config = GridConfig::default();
            let mut bank =
                TableBank::new(config.clone(), RewardParams::default(), DEFAULT_TOLERANCE).unwrap();
            bank.ensure(&all_trial_pairs(&config), None).unwrap();
            bank
        })
    }

    #[test]
    fn fresh_session_has_uniform_priors() {
        let s = Session::new("a", bank(), ModelKind::Random, None, 3).unwrap();
        let v = s.beliefs();
        assert_eq!(v.joint.len(), 12);
        for w in &v.joint {
            assert!((w.prob - 1.0 / 12.0).abs() < 1e-12);
        }
        for w in &v.models {
            assert!((w.prob - 0.25).abs() < 1e-12);
        }
        assert!(s.trajectory().is_empty());
        assert!(s.status().is_active());
    }

    #[test]
    fn same_seed_same_session() {
        let mut a = Session::new("a", bank(), ModelKind::Random, None, 11).unwrap();
        let mut b = Session::new("b", bank(), ModelKind::Random, None, 11).unwrap();
        assert_eq!(a.state(), b.state());
        assert_eq!(a.goal(), b.goal());
        for _ in 0..6 {
            if !a.status().is_active() {
                break;
            }
            let act = a.legal_actions().unwrap()[0];
            assert_eq!(a.play(bank(), act).unwrap(), b.play(bank(), act).unwrap());
        }
    }

    #[test]
    fn illegal_and_finished_moves_rejected() {
        let mut s = Session::new("a", bank(), ModelKind::Stationary, None, 5).unwrap();
        // Human starts on the bottom row, so Down is off the grid.
        let err = s.play(bank(), Action::Down).unwrap_err();
        assert!(matches!(
            err,
            Error::IllegalAction {
                action: Action::Down,
                ..
            }
        ));
        assert!(s.trajectory().is_empty());
        s.finish();
        assert_eq!(s.status(), SessionStatus::Finished(Outcome::Incomplete));
        assert!(matches!(
            s.play(bank(), Action::Up),
            Err(Error::Finished(Outcome::Incomplete))
        ));
    }

    #[test]
    fn walking_into_agent_collides() {
        // Stationary agent: walk toward it until adjacent, then step in.
        let mut s = Session::new("a", bank(), ModelKind::Stationary, None, 1).unwrap();
        let agent = s.state().agent;
        while s.state().human.manhattan(agent) > 1 {
            let h = s.state().human;
            let step = if h.y > agent.y + 1 || (h.x == agent.x && h.y > agent.y) {
                Action::Up
            } else if h.x < agent.x {
                Action::Right
            } else if h.x > agent.x {
                Action::Left
            } else {
                Action::Up
            };
            let turn = s.play(bank(), step).unwrap();
            assert_eq!(turn.agent_action, Some(Action::Stay));
            assert!(s.status().is_active(), "reached the goal before the agent");
        }
        let h = s.state().human;
        let into = Action::ALL
            .into_iter()
            .find(|a| h.offset(*a) == agent)
            .unwrap();
        let turn = s.play(bank(), into).unwrap();
        assert_eq!(turn.state.status, Status::Collided);
        assert_eq!(turn.agent_action, None);
        assert_eq!(s.status(), SessionStatus::Finished(Outcome::Collided));
        assert!(!s.finish().meta.is_success());
    }
}
