//! History-dependent policies.

use std::collections::HashMap;
use std::sync::Arc;

use crate::model::{HistoryKey, ObservedHistory};
use crate::rng::RngStream;

/// Action distribution returned for one decision history.
#[derive(Clone, Debug, PartialEq)]
pub enum ActionDist {
    Point(usize),
    Uniform,
    Weights(Vec<f64>),
}

impl ActionDist {
    pub fn prob(&self, a: usize, num_actions: usize) -> f64 {
        match self {
            ActionDist::Point(b) => {
                if *b == a {
                    1.0
                } else {
                    0.0
                }
            }
            ActionDist::Uniform => 1.0 / num_actions as f64,
            ActionDist::Weights(w) => w.get(a).copied().unwrap_or(0.0),
        }
    }

    /// `(action, probability)` pairs with positive probability.
    pub fn support(&self, num_actions: usize) -> Vec<(usize, f64)> {
        match self {
            ActionDist::Point(a) => vec![(*a, 1.0)],
            ActionDist::Uniform => {
                let p = 1.0 / num_actions as f64;
                (0..num_actions).map(|a| (a, p)).collect()
            }
            ActionDist::Weights(w) => w
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(a, &p)| (a, p))
                .collect(),
        }
    }

    pub fn is_valid(&self, num_actions: usize) -> bool {
        match self {
            ActionDist::Point(a) => *a < num_actions,
            ActionDist::Uniform => num_actions > 0,
            ActionDist::Weights(w) => {
                w.len() == num_actions
                    && w.iter().all(|&p| p.is_finite() && p >= 0.0)
                    && (w.iter().sum::<f64>() - 1.0).abs() <= 1e-9
            }
        }
    }

    /// Draws an action. A point mass consumes no randomness.
    pub fn sample(&self, num_actions: usize, rng: &mut RngStream) -> usize {
        match self {
            ActionDist::Point(a) => *a,
            ActionDist::Uniform => rng.categorical(&vec![1.0; num_actions]),
            ActionDist::Weights(w) => rng.categorical(w),
        }
    }

    pub fn as_point(&self) -> Option<usize> {
        match self {
            ActionDist::Point(a) => Some(*a),
            _ => None,
        }
    }
}

/// Map from observed decision histories `(y_{1:h}, a_{1:h-1})` to action
/// distributions. Latent states are not part of the signature.
pub trait HistoryPolicy: Send + Sync {
    fn decide(&self, history: &ObservedHistory) -> ActionDist;
}

impl<P: HistoryPolicy + ?Sized> HistoryPolicy for &P {
    fn decide(&self, history: &ObservedHistory) -> ActionDist {
        (**self).decide(history)
    }
}

impl<P: HistoryPolicy + ?Sized> HistoryPolicy for Box<P> {
    fn decide(&self, history: &ObservedHistory) -> ActionDist {
        (**self).decide(history)
    }
}

impl<P: HistoryPolicy + ?Sized> HistoryPolicy for Arc<P> {
    fn decide(&self, history: &ObservedHistory) -> ActionDist {
        (**self).decide(history)
    }
}

/// Deterministic policy stored as an explicit table keyed by canonical
/// history. Histories absent from the table get `fallback`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TablePolicy {
    table: HashMap<HistoryKey, usize>,
    fallback: usize,
}

impl TablePolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fallback(fallback: usize) -> Self {
        Self { table: HashMap::new(), fallback }
    }

    pub fn insert(&mut self, history: &ObservedHistory, action: usize) {
        self.table.insert(HistoryKey::of(history), action);
    }

    pub fn insert_key(&mut self, key: HistoryKey, action: usize) {
        self.table.insert(key, action);
    }

    pub fn action(&self, history: &ObservedHistory) -> usize {
        self.table.get(&HistoryKey::of(history)).copied().unwrap_or(self.fallback)
    }

    pub fn fallback(&self) -> usize {
        self.fallback
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Entries sorted by key, for stable serialization.
    pub fn entries(&self) -> Vec<(HistoryKey, usize)> {
        let mut v: Vec<_> = self.table.iter().map(|(k, a)| (k.clone(), *a)).collect();
        v.sort();
        v
    }
}

impl HistoryPolicy for TablePolicy {
    fn decide(&self, history: &ObservedHistory) -> ActionDist {
        ActionDist::Point(self.action(history))
    }
}

/// Uniform over actions at every history.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformPolicy;

impl HistoryPolicy for UniformPolicy {
    fn decide(&self, _: &ObservedHistory) -> ActionDist {
        ActionDist::Uniform
    }
}

/// Always the same action.
#[derive(Clone, Copy, Debug)]
pub struct ConstantPolicy(pub usize);

impl HistoryPolicy for ConstantPolicy {
    fn decide(&self, _: &ObservedHistory) -> ActionDist {
        ActionDist::Point(self.0)
    }
}

/// Closure-backed policy.
pub struct FnPolicy<F>(pub F);

impl<F> HistoryPolicy for FnPolicy<F>
where
    F: Fn(&ObservedHistory) -> ActionDist + Send + Sync,
{
    fn decide(&self, history: &ObservedHistory) -> ActionDist {
        (self.0)(history)
    }
}

/// `base ∘_step Unif(A)`: uniform on histories with exactly `step`
/// observations, `base` everywhere else.
#[derive(Clone, Debug)]
pub struct ExplorePolicy<P> {
    base: P,
    step: usize,
}

impl<P> ExplorePolicy<P> {
    pub(crate) fn new(base: P, step: usize) -> Self {
        Self { base, step }
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn base(&self) -> &P {
        &self.base
    }
}

impl<P: HistoryPolicy> HistoryPolicy for ExplorePolicy<P> {
    fn decide(&self, history: &ObservedHistory) -> ActionDist {
        if history.len() == self.step {
            ActionDist::Uniform
        } else {
            self.base.decide(history)
        }
    }
}
