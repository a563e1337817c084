use rand::Rng;

use crate::grid::{Action, ActionSet};

/// Probability mass over the five actions, indexed by [`Action::index`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionDistribution([f64; Action::COUNT]);

impl ActionDistribution {
    pub fn from_probs(probs: [f64; Action::COUNT]) -> Self {
        ActionDistribution(probs)
    }

    pub fn point(a: Action) -> Self {
        let mut p = [0.0; Action::COUNT];
        p[a.index()] = 1.0;
        ActionDistribution(p)
    }

    pub fn uniform(support: ActionSet) -> Self {
        let w = 1.0 / support.len() as f64;
        let mut p = [0.0; Action::COUNT];
        for a in support.iter() {
            p[a.index()] = w;
        }
        ActionDistribution(p)
    }

    pub fn prob(&self, a: Action) -> f64 {
        self.0[a.index()]
    }

    pub fn probs(&self) -> &[f64; Action::COUNT] {
        &self.0
    }

    pub fn support(&self) -> ActionSet {
        self.iter()
            .filter(|(_, p)| *p > 0.0)
            .map(|(a, _)| a)
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Action, f64)> + '_ {
        Action::ALL.into_iter().map(|a| (a, self.0[a.index()]))
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Inverse-CDF draw over actions in canonical order.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        let u: f64 = rng.gen::<f64>() * self.total();
        let mut acc = 0.0;
        let mut last = None;
        for (a, p) in self.iter() {
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = Some(a);
            if u < acc {
                return a;
            }
        }
        last.expect("distribution has no support")
    }
}
