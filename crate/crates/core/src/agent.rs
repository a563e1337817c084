//! Subintentional agent models: state-conditioned action distributions that
//! the human is assumed to attribute to the agent.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::ActionDistribution;
use crate::error::{Error, Result};
use crate::grid::{legal_actions, Action, ActionSet, Cell, EnvState, GridConfig};

/// Model family without trial-specific parameters. Serializes as
/// `"stationary"`, `"random"`, `"fixed_goal"` or `"chasing"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Stationary,
    Random,
    FixedGoal,
    Chasing,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Stationary,
        ModelKind::Random,
        ModelKind::FixedGoal,
        ModelKind::Chasing,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Stationary => "stationary",
            ModelKind::Random => "random",
            ModelKind::FixedGoal => "fixed_goal",
            ModelKind::Chasing => "chasing",
        }
    }

    /// Concrete model for a trial whose human starts at `human_start`; the
    /// fixed-goal agent heads for that cell.
    pub fn instantiate(self, human_start: Cell) -> AgentModel {
        match self {
            ModelKind::Stationary => AgentModel::Stationary,
            ModelKind::Random => AgentModel::Random,
            ModelKind::FixedGoal => AgentModel::FixedGoal {
                target: human_start,
            },
            ModelKind::Chasing => AgentModel::Chasing,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Domain(format!("unknown agent model {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentModel {
    Stationary,
    Random,
    FixedGoal { target: Cell },
    Chasing,
}

impl AgentModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            AgentModel::Stationary => ModelKind::Stationary,
            AgentModel::Random => ModelKind::Random,
            AgentModel::FixedGoal { .. } => ModelKind::FixedGoal,
            AgentModel::Chasing => ModelKind::Chasing,
        }
    }

    /// The four model hypotheses for a trial, in [`ModelKind::ALL`] order.
    pub fn hypotheses(human_start: Cell) -> Vec<AgentModel> {
        ModelKind::ALL
            .iter()
            .map(|k| k.instantiate(human_start))
            .collect()
    }
}

impl fmt::Display for AgentModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentModel::FixedGoal { target } => write!(f, "fixed_goal{target}"),
            other => f.write_str(other.kind().name()),
        }
    }
}

/// Legal moves that bring the agent closest to `target`; `Stay` only once the
/// target is reached.
fn greedy_toward(legal: ActionSet, from: Cell, target: Cell) -> ActionDistribution {
    if from == target {
        return ActionDistribution::point(Action::Stay);
    }
    let moves: Vec<Action> = legal.iter().filter(|a| *a != Action::Stay).collect();
    let best = moves
        .iter()
        .map(|a| from.offset(*a).manhattan(target))
        .min();
    match best {
        Some(best) => ActionDistribution::uniform(
            moves
                .into_iter()
                .filter(|a| from.offset(*a).manhattan(target) == best)
                .collect(),
        ),
        None => ActionDistribution::point(Action::Stay),
    }
}

pub fn agent_policy(
    config: &GridConfig,
    model: &AgentModel,
    s: &EnvState,
) -> Result<ActionDistribution> {
    if !s.is_active() {
        return Err(Error::NotActive(s.status));
    }
    let legal = legal_actions(config, s.agent)?;
    Ok(match model {
        AgentModel::Stationary => ActionDistribution::point(Action::Stay),
        AgentModel::Random => ActionDistribution::uniform(legal),
        AgentModel::FixedGoal { target } => greedy_toward(legal, s.agent, *target),
        AgentModel::Chasing => greedy_toward(legal, s.agent, s.human),
    })
}

pub fn sample_agent_action<R: Rng + ?Sized>(
    config: &GridConfig,
    model: &AgentModel,
    s: &EnvState,
    rng: &mut R,
) -> Result<Action> {
    Ok(agent_policy(config, model, s)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::enumerate_states;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn st(h: (i32, i32), a: (i32, i32)) -> EnvState {
        EnvState::active(Cell::new(h.0, h.1), Cell::new(a.0, a.1))
    }

    #[test]
    fn stationary_stays() {
        let cfg = GridConfig::default();
        let d = agent_policy(&cfg, &AgentModel::Stationary, &st((0, 8), (4, 4))).unwrap();
        assert_eq!(d.prob(Action::Stay), 1.0);
    }

    #[test]
    fn random_is_uniform_over_legal() {
        let cfg = GridConfig::default();
        let d = agent_policy(&cfg, &AgentModel::Random, &st((0, 8), (4, 4))).unwrap();
        for a in Action::ALL {
            assert_eq!(d.prob(a), 0.2);
        }
        let d = agent_policy(&cfg, &AgentModel::Random, &st((4, 4), (0, 0))).unwrap();
        assert_eq!(d.prob(Action::Up), 0.0);
        assert!((d.prob(Action::Stay) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn chasing_ties_split_evenly() {
        // Successor distances to (2,2) from (4,4): Up 3, Down 5, Left 3, Right 5.
        let cfg = GridConfig::default();
        let s = st((2, 2), (4, 4));
        let brute: Vec<Action> = {
            let legal = legal_actions(&cfg, s.agent).unwrap();
            let dists: Vec<(Action, u32)> = legal
                .iter()
                .filter(|a| *a != Action::Stay)
                .map(|a| (a, s.agent.offset(a).manhattan(s.human)))
                .collect();
            let min = dists.iter().map(|d| d.1).min().unwrap();
            dists
                .into_iter()
                .filter(|d| d.1 == min)
                .map(|d| d.0)
                .collect()
        };
        assert_eq!(brute, vec![Action::Up, Action::Left]);
        let d = agent_policy(&cfg, &AgentModel::Chasing, &s).unwrap();
        assert_eq!(d.prob(Action::Up), 0.5);
        assert_eq!(d.prob(Action::Left), 0.5);
    }

    #[test]
    fn fixed_goal_at_target_stays() {
        let cfg = GridConfig::default();
        let model = AgentModel::FixedGoal {
            target: Cell::new(4, 8),
        };
        let s = st((0, 0), (4, 8));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(
            sample_agent_action(&cfg, &model, &s, &mut rng).unwrap(),
            Action::Stay
        );
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let cfg = GridConfig::default();
        let s = st((0, 8), (4, 4));
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| sample_agent_action(&cfg, &AgentModel::Random, &s, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            sample_agent_action(&cfg, &AgentModel::Stationary, &s, &mut rng).unwrap(),
            Action::Stay
        );
    }

    #[test]
    fn non_active_state_rejected() {
        let cfg = GridConfig::default();
        let mut s = st((0, 8), (4, 4));
        s.status = crate::grid::Status::Collided;
        assert!(agent_policy(&cfg, &AgentModel::Random, &s).is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
            assert_eq!(
                serde_json::to_string(&k).unwrap(),
                format!("\"{}\"", k.name())
            );
        }
        let m = AgentModel::FixedGoal {
            target: Cell::new(0, 8),
        };
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"kind":"fixed_goal","target":[0,8]}"#);
        assert_eq!(serde_json::from_str::<AgentModel>(&json).unwrap(), m);
    }

    fn all_models() -> Vec<AgentModel> {
        vec![
            AgentModel::Stationary,
            AgentModel::Random,
            AgentModel::FixedGoal {
                target: Cell::new(4, 8),
            },
            AgentModel::FixedGoal {
                target: Cell::new(0, 0),
            },
            AgentModel::Chasing,
        ]
    }

    #[test]
    fn policies_are_normalized_and_legal_everywhere() {
        let cfg = GridConfig::default();
        for s in enumerate_states(&cfg) {
            let legal = legal_actions(&cfg, s.agent).unwrap();
            for m in all_models() {
                let d = agent_policy(&cfg, &m, &s).unwrap();
                assert!((d.total() - 1.0).abs() < 1e-12);
                for (a, p) in d.iter() {
                    if !legal.contains(a) {
                        assert_eq!(p, 0.0);
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn greedy_models_make_progress(hx in 0..9i32, hy in 0..9i32, ax in 0..9i32, ay in 0..9i32,
                                       tx in 0..9i32, ty in 0..9i32) {
            prop_assume!((hx, hy) != (ax, ay));
            let cfg = GridConfig::default();
            let s = st((hx, hy), (ax, ay));
            let target = Cell::new(tx, ty);
            let fixed = agent_policy(&cfg, &AgentModel::FixedGoal { target }, &s).unwrap();
            let before = s.agent.manhattan(target);
            for a in fixed.support().iter() {
                let after = s.agent.offset(a).manhattan(target);
                if before == 0 {
                    prop_assert_eq!(after, 0);
                } else {
                    prop_assert!(after < before);
                }
            }
            let chase = agent_policy(&cfg, &AgentModel::Chasing, &s).unwrap();
            let as_fixed = agent_policy(&cfg, &AgentModel::FixedGoal { target: s.human }, &s).unwrap();
            prop_assert_eq!(chase, as_fixed);
        }
    }
}
