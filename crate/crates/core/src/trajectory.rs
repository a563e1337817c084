//! Observed trials and their line-delimited JSON persistence.
//!
//! A record file starts with one header line carrying the schema version and
//! trial metadata, followed by one line per human step:
//!
//! ```text
//! {"schemaVersion":1,"trialId":"t0","condition":"chasing",...}
//! {"step":0,"state":{"human":[4,8],"agent":[4,4],"status":"active"},"action":"up"}
//! ```

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentModel, ModelKind};
use crate::error::{Error, Result};
use crate::grid::{apply_human_move, legal_actions, Action, Cell, EnvState, GridConfig, Status};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Collided,
    Truncated,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrajectoryMeta {
    pub trial_id: String,
    pub condition: ModelKind,
    pub goal: Cell,
    pub human_start: Cell,
    pub agent_start: Cell,
    pub seed: u64,
    pub outcome: Outcome,
}

impl TrajectoryMeta {
    /// The generating agent model, instantiated for this trial.
    pub fn true_model(&self) -> AgentModel {
        self.condition.instantiate(self.human_start)
    }

    pub fn is_success(&self) -> bool {
        self.outcome == Outcome::Success
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub state: EnvState,
    pub action: Action,
}

/// Human-turn states and the actions taken in them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub meta: TrajectoryMeta,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn new(meta: TrajectoryMeta) -> Self {
        Trajectory {
            meta,
            steps: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn validate(&self, config: &GridConfig) -> Result<()> {
        let bad = |step: usize, reason: String| Err(Error::InvalidTrajectory { step, reason });
        let meta = &self.meta;
        if config.goal_index(meta.goal).is_none() {
            return bad(0, format!("goal {} is not a configured goal", meta.goal));
        }
        for (i, step) in self.steps.iter().enumerate() {
            let s = &step.state;
            if !s.is_active() {
                return bad(i, format!("state status is {:?}", s.status));
            }
            if !config.is_free(s.human) || !config.is_free(s.agent) || s.human == s.agent {
                return bad(i, "human and agent must occupy distinct free cells".into());
            }
            if i == 0 && (s.human != meta.human_start || s.agent != meta.agent_start) {
                return bad(
                    0,
                    "first state does not match the recorded start cells".into(),
                );
            }
            if !legal_actions(config, s.human)?.contains(step.action) {
                return bad(
                    i,
                    format!("action {} is illegal at {}", step.action.name(), s.human),
                );
            }
            let after = apply_human_move(config, s, step.action, meta.goal)?;
            match self.steps.get(i + 1) {
                Some(next) => {
                    if after.status != Status::Active {
                        return bad(
                            i,
                            format!(
                                "episode ended ({:?}) but the trajectory continues",
                                after.status
                            ),
                        );
                    }
                    let agent_ok = legal_actions(config, after.agent)?
                        .iter()
                        .any(|a| after.agent.offset(a) == next.state.agent);
                    if next.state.human != after.human || !agent_ok {
                        return bad(
                            i + 1,
                            "state is not reachable from the previous step".into(),
                        );
                    }
                }
                None => {
                    if meta.outcome == Outcome::Success && after.status != Status::GoalReached {
                        return bad(
                            i,
                            "trial marked successful but the last move does not reach the goal"
                                .into(),
                        );
                    }
                }
            }
        }
        if self.steps.is_empty() && meta.outcome == Outcome::Success {
            return bad(0, "trial marked successful but has no steps".into());
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        let header = Header {
            schema_version: SCHEMA_VERSION,
            meta: self.meta.clone(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for (i, step) in self.steps.iter().enumerate() {
            serde_json::to_writer(
                &mut out,
                &StepLine {
                    step: i,
                    inner: *step,
                },
            )?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)
            .expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Domain("empty trajectory file".into()))??;
        let probe: VersionProbe = serde_json::from_str(&first)?;
        if probe.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema {
                found: probe.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let header: Header = serde_json::from_str(&first)?;
        let mut steps = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: StepLine =
                serde_json::from_str(&line).map_err(|e| Error::InvalidTrajectory {
                    step: steps.len(),
                    reason: e.to_string(),
                })?;
            if parsed.step != steps.len() {
                return Err(Error::InvalidTrajectory {
                    step: steps.len(),
                    reason: format!("step index {} out of sequence", parsed.step),
                });
            }
            steps.push(parsed.inner);
        }
        Ok(Trajectory {
            meta: header.meta,
            steps,
        })
    }

    pub fn from_jsonl_str(text: &str) -> Result<Self> {
        Self::read_jsonl(text.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(file))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_jsonl_string())?;
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct VersionProbe {
    schema_version: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Header {
    schema_version: u32,
    #[serde(flatten)]
    meta: TrajectoryMeta,
}

#[derive(Serialize, Deserialize)]
struct StepLine {
    step: usize,
    #[serde(flatten)]
    inner: Step,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta() -> TrajectoryMeta {
        TrajectoryMeta {
            trial_id: "t-1".into(),
            condition: ModelKind::Stationary,
            goal: Cell::new(0, 0),
            human_start: Cell::new(0, 8),
            agent_start: Cell::new(4, 4),
            seed: 7,
            outcome: Outcome::Success,
        }
    }

    /// Straight up the left column past a stationary agent.
    fn straight_up() -> Trajectory {
        let mut t = Trajectory::new(meta());
        for y in (1..=8).rev() {
            t.steps.push(Step {
                state: EnvState::active(Cell::new(0, y), Cell::new(4, 4)),
                action: Action::Up,
            });
        }
        t
    }

    #[test]
    fn valid_trajectory_passes() {
        straight_up().validate(&GridConfig::default()).unwrap();
    }

    #[test]
    fn illegal_action_names_step() {
        let mut t = straight_up();
        t.steps[3].action = Action::Left;
        match t.validate(&GridConfig::default()) {
            Err(Error::InvalidTrajectory { step, .. }) => assert_eq!(step, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn teleport_names_step() {
        let mut t = straight_up();
        t.steps[5].state.agent = Cell::new(7, 7);
        match t.validate(&GridConfig::default()) {
            Err(Error::InvalidTrajectory { step, .. }) => assert_eq!(step, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn success_requires_reaching_goal() {
        let mut t = straight_up();
        t.steps.pop();
        assert!(t.validate(&GridConfig::default()).is_err());
        t.meta.outcome = Outcome::Incomplete;
        t.validate(&GridConfig::default()).unwrap();
    }

    #[test]
    fn record_format_is_stable() {
        let t = straight_up();
        let text = t.to_jsonl_string();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            r#"{"schemaVersion":1,"trialId":"t-1","condition":"stationary","goal":[0,0],"humanStart":[0,8],"agentStart":[4,4],"seed":7,"outcome":"success"}"#
        );
        assert_eq!(
            lines.next().unwrap(),
            r#"{"step":0,"state":{"human":[0,8],"agent":[4,4],"status":"active"},"action":"up"}"#
        );
        assert_eq!(text.lines().count(), 9);
    }

    #[test]
    fn schema_version_checked() {
        let text = straight_up().to_jsonl_string().replacen(
            "\"schemaVersion\":1",
            "\"schemaVersion\":2",
            1,
        );
        assert!(matches!(
            Trajectory::from_jsonl_str(&text),
            Err(Error::Schema {
                found: 2,
                expected: 1
            })
        ));
    }

    #[test]
    fn empty_step_file_loads() {
        let mut t = Trajectory::new(meta());
        t.meta.outcome = Outcome::Incomplete;
        let back = Trajectory::from_jsonl_str(&t.to_jsonl_string()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back, t);
    }

    proptest! {
        #[test]
        fn save_load_save_is_byte_identical(
            actions in proptest::collection::vec(0usize..5, 0..30),
            seed in any::<u64>(),
            id in "[a-z0-9-]{1,12}",
        ) {
            let mut t = Trajectory::new(TrajectoryMeta { trial_id: id, seed, outcome: Outcome::Incomplete, ..meta() });
            for (i, a) in actions.iter().enumerate() {
                t.steps.push(Step {
                    state: EnvState::active(Cell::new((i % 9) as i32, 8), Cell::new(4, 4)),
                    action: Action::from_index(*a).unwrap(),
                });
            }
            let first = t.to_jsonl_string();
            let loaded = Trajectory::from_jsonl_str(&first).unwrap();
            prop_assert_eq!(&loaded, &t);
            prop_assert_eq!(loaded.to_jsonl_string(), first);
        }
    }
}
