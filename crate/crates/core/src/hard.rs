//! Binary-tree instances where learning the leaf decision needs many visits.
//!
//! Layout, with `H = log2(X + 1)`:
//! - states `0..X` are a complete binary tree in level order (root `0`,
//!   children of `n` are `2n + 1` (upper) and `2n + 2` (lower)); state `X` is
//!   an absorbing dummy reached after the last layer;
//! - observation `0` means "upper child" and `1` "lower child" (the root and
//!   the dummy emit `0`); observations `2..Y` are the leaf alphabet `Y'`,
//!   whose first half `Y'+` mirrors the second (`y <-> y + Y'/2`);
//! - parent `i` (0-based, layer `H - 1`) is node `X'/2 - 1 + i`; its upper
//!   leaf pays 1 for action 0, its lower leaf pays 1 for action 1;
//! - leaves emit `(1 +- u(y, i) eps) / Y'` with mirrored signs, so the parent
//!   alone fixes a uniform marginal over `Y'` while the posterior of the
//!   upper leaf is `(1 + u eps) / 2`.

use serde::{Deserialize, Serialize};

use crate::error::{HomdpError, Result};
use crate::model::{EmissionTable, HomdpModel, ObservedHistory, RewardTable, TransitionTable};
use crate::planner::{eval_policy_enum, Budget};
use crate::policy::{ActionDist, HistoryPolicy};
use crate::rng::RngStream;

pub const Y_UP: usize = 0;
pub const Y_DOWN: usize = 1;

/// Parameters of one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardInstanceSpec {
    /// Tree size; `X + 1` must be a power of two and `X >= 3`.
    pub x: usize,
    /// Even, at least 4.
    pub y: usize,
    pub epsilon: f64,
    /// Signs indexed by `i * (Y'/2) + (y - 2)` for parent `i`, `y` in `Y'+`.
    pub u: Vec<i8>,
}

/// Result of rounding user sizes down to admissible ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoundedDims {
    pub x: usize,
    pub y: usize,
    pub adjusted: bool,
}

/// Largest admissible `(X, Y)` not above the request.
pub fn round_down_dims(x: usize, y: usize) -> Result<RoundedDims> {
    if x < 3 || y < 4 {
        return Err(HomdpError::InvalidSpec(format!(
            "X = {x}, Y = {y}: need X >= 3 and Y >= 4"
        )));
    }
    let rx = (1usize << (usize::BITS - 1 - (x + 1).leading_zeros())) - 1;
    let ry = y - y % 2;
    Ok(RoundedDims { x: rx, y: ry, adjusted: rx != x || ry != y })
}

impl HardInstanceSpec {
    /// Spec with all signs `+1`.
    pub fn new(x: usize, y: usize, epsilon: f64) -> Result<Self> {
        let mut s = HardInstanceSpec { x, y, epsilon, u: Vec::new() };
        s.check_dims()?;
        s.u = vec![1; s.u_len()];
        s.validate()?;
        Ok(s)
    }

    /// Spec with uniformly random signs.
    pub fn random(x: usize, y: usize, epsilon: f64, rng: &mut RngStream) -> Result<Self> {
        let mut s = Self::new(x, y, epsilon)?;
        s.u = random_signs(s.u_len(), rng);
        Ok(s)
    }

    pub fn with_u(mut self, u: Vec<i8>) -> Result<Self> {
        self.u = u;
        self.validate()?;
        Ok(self)
    }

    fn check_dims(&self) -> Result<()> {
        if self.x < 3 || !(self.x + 1).is_power_of_two() {
            return Err(HomdpError::InvalidSpec(format!(
                "X + 1 = {} must be a power of two with X >= 3",
                self.x + 1
            )));
        }
        if self.y < 4 || self.y % 2 != 0 {
            return Err(HomdpError::InvalidSpec(format!("Y = {} must be even and >= 4", self.y)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon < 0.5) {
            return Err(HomdpError::InvalidSpec(format!(
                "epsilon = {} outside [0, 1/2)",
                self.epsilon
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check_dims()?;
        if self.u.len() != self.u_len() {
            return Err(HomdpError::InvalidSpec(format!(
                "u has {} entries, expected X'Y'/4 = {}",
                self.u.len(),
                self.u_len()
            )));
        }
        if self.u.iter().any(|&s| s != 1 && s != -1) {
            return Err(HomdpError::InvalidSpec("u entries must be +1 or -1".into()));
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        (self.x + 1).trailing_zeros() as usize
    }

    /// `X' = (X + 1) / 2` leaves.
    pub fn x_prime(&self) -> usize {
        (self.x + 1) / 2
    }

    /// `Y' = Y - 2` leaf observations.
    pub fn y_prime(&self) -> usize {
        self.y - 2
    }

    pub fn num_parents(&self) -> usize {
        self.x_prime() / 2
    }

    pub fn u_len(&self) -> usize {
        self.x_prime() * self.y_prime() / 4
    }

    pub fn parent_node(&self, i: usize) -> usize {
        self.num_parents() - 1 + i
    }

    /// `(upper, lower)` leaves of parent `i`.
    pub fn leaves(&self, i: usize) -> (usize, usize) {
        let p = self.parent_node(i);
        (2 * p + 1, 2 * p + 2)
    }

    pub fn dummy_state(&self) -> usize {
        self.x
    }

    /// Sign `s` with posterior `P(upper leaf | y, parent i) = (1 + s eps) / 2`.
    /// `y` must be a leaf observation.
    pub fn posterior_sign(&self, i: usize, y: usize) -> i8 {
        let half = self.y_prime() / 2;
        let j = y - 2;
        if j < half {
            self.u[i * half + j]
        } else {
            -self.u[i * half + (j - half)]
        }
    }
}

pub fn random_signs(len: usize, rng: &mut RngStream) -> Vec<i8> {
    (0..len).map(|_| rng.sign()).collect()
}

/// Builds the full model described in the module docs.
pub fn build_hard_instance(spec: &HardInstanceSpec) -> Result<HomdpModel> {
    spec.validate()?;
    let nx = spec.x + 1;
    let ny = spec.y;
    let yp = spec.y_prime() as f64;
    let first_leaf = spec.x_prime() - 1;
    let dummy = spec.dummy_state();

    let mut trans = TransitionTable::uniform(nx, 2);
    for n in 0..nx {
        for a in 0..2 {
            let row = trans.row_mut(n, a);
            row.iter_mut().for_each(|p| *p = 0.0);
            if n < first_leaf {
                row[2 * n + 1] = 0.5;
                row[2 * n + 2] = 0.5;
            } else {
                row[dummy] = 1.0;
            }
        }
    }

    let mut emit = EmissionTable::uniform(nx, ny);
    for n in 0..nx {
        emit.row_mut(n).iter_mut().for_each(|p| *p = 0.0);
        if n == 0 || n == dummy {
            emit.row_mut(n)[Y_UP] = 1.0;
        } else if n < first_leaf {
            emit.row_mut(n)[if n % 2 == 1 { Y_UP } else { Y_DOWN }] = 1.0;
        }
    }
    let mut reward = RewardTable::constant(nx, 2, 0.0);
    let mut rdata = reward.to_nested();
    for i in 0..spec.num_parents() {
        let (up, down) = spec.leaves(i);
        for y in 2..ny {
            let s = spec.posterior_sign(i, y) as f64;
            emit.row_mut(up)[y] = (1.0 + s * spec.epsilon) / yp;
            emit.row_mut(down)[y] = (1.0 - s * spec.epsilon) / yp;
        }
        rdata[up][0] = 1.0;
        rdata[down][1] = 1.0;
    }
    reward = RewardTable::from_nested(&rdata)?;
    let mut rho = vec![0.0; nx];
    rho[0] = 1.0;
    HomdpModel::new(spec.horizon(), rho, trans, emit, reward)
}

/// Parent index decoded from the path observations `y_2 .. y_{H-1}`.
fn decode_parent(spec: &HardInstanceSpec, obs: &[usize]) -> Option<usize> {
    let h = spec.horizon();
    if obs.len() < h {
        return None;
    }
    let mut node = 0usize;
    for &y in &obs[1..h - 1] {
        node = match y {
            Y_UP => 2 * node + 1,
            Y_DOWN => 2 * node + 2,
            _ => return None,
        };
    }
    node.checked_sub(spec.num_parents() - 1).filter(|&i| i < spec.num_parents())
}

/// Deterministic policy that acts only at the last step, as a table over
/// `(parent, leaf observation)`; earlier steps play action 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafPolicy {
    pub spec_x: usize,
    pub spec_y: usize,
    /// Action at `i * Y' + (y - 2)`.
    pub actions: Vec<u8>,
}

impl LeafPolicy {
    pub fn new(spec: &HardInstanceSpec, actions: Vec<u8>) -> Result<Self> {
        if actions.len() != spec.num_parents() * spec.y_prime() || actions.iter().any(|&a| a > 1) {
            return Err(HomdpError::InvalidArgument("leaf policy table has the wrong shape".into()));
        }
        Ok(Self { spec_x: spec.x, spec_y: spec.y, actions })
    }

    pub fn random(spec: &HardInstanceSpec, rng: &mut RngStream) -> Self {
        let actions = (0..spec.num_parents() * spec.y_prime()).map(|_| rng.below(2) as u8).collect();
        Self { spec_x: spec.x, spec_y: spec.y, actions }
    }

    pub fn action(&self, i: usize, y: usize) -> usize {
        self.actions[i * (self.spec_y - 2) + (y - 2)] as usize
    }

    fn shape_spec(&self) -> HardInstanceSpec {
        let mut s = HardInstanceSpec { x: self.spec_x, y: self.spec_y, epsilon: 0.0, u: Vec::new() };
        s.u = vec![1; s.u_len()];
        s
    }
}

impl HistoryPolicy for LeafPolicy {
    fn decide(&self, history: &ObservedHistory) -> ActionDist {
        let spec = self.shape_spec();
        let h = spec.horizon();
        if history.obs.len() != h {
            return ActionDist::Point(0);
        }
        let y = history.obs[h - 1];
        match decode_parent(&spec, &history.obs) {
            Some(i) if y >= 2 => ActionDist::Point(self.action(i, y)),
            _ => ActionDist::Point(0),
        }
    }
}

/// Posterior-argmax policy: at the last step pick the leaf with the larger
/// posterior given parent and final observation (ties to action 0).
pub fn posterior_argmax_policy(spec: &HardInstanceSpec) -> LeafPolicy {
    let mut actions = Vec::with_capacity(spec.num_parents() * spec.y_prime());
    for i in 0..spec.num_parents() {
        for y in 2..spec.y {
            let upper_wins = spec.epsilon == 0.0 || spec.posterior_sign(i, y) > 0;
            actions.push(if upper_wins { 0 } else { 1 });
        }
    }
    LeafPolicy { spec_x: spec.x, spec_y: spec.y, actions }
}

/// Posterior-argmax policy with its exact value. The value equals the
/// closed form `(1 + eps) / 2`; the enumeration is there to confirm it.
pub fn optimal_value_hard(spec: &HardInstanceSpec, model: &HomdpModel) -> Result<(LeafPolicy, f64)> {
    let pi = posterior_argmax_policy(spec);
    let v = eval_policy_enum(&model.pomdp(), &pi, Budget::default())?;
    Ok((pi, v))
}

/// Greedy randomized packing of sign vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackingSet {
    pub members: Vec<Vec<i8>>,
    /// Smallest number of differing coordinates over pairs (`L1 / 2`).
    pub min_pairwise_hamming: usize,
}

pub fn hamming(u: &[i8], v: &[i8]) -> usize {
    u.iter().zip(v).filter(|(a, b)| a != b).count()
}

/// `ceil(X'Y' / 8)`, the default pairwise L1 separation.
pub fn default_min_l1(x_prime: usize, y_prime: usize) -> usize {
    (x_prime * y_prime).div_ceil(8)
}

/// Samples uniform sign vectors of length `X'Y'/4` and keeps those whose L1
/// distance to every kept vector is at least `min_l1`. Stops at `target`
/// members or after `max_attempts` samples; fewer than two is an error.
pub fn build_packing(
    x_prime: usize,
    y_prime: usize,
    rng: &mut RngStream,
    min_l1: usize,
    target: usize,
    max_attempts: usize,
) -> Result<PackingSet> {
    let len = x_prime * y_prime / 4;
    if len == 0 {
        return Err(HomdpError::InvalidSpec("X'Y'/4 must be positive".into()));
    }
    let mut members: Vec<Vec<i8>> = Vec::new();
    for _ in 0..max_attempts {
        if members.len() >= target {
            break;
        }
        let cand = random_signs(len, rng);
        if members.iter().all(|m| 2 * hamming(m, &cand) >= min_l1) {
            members.push(cand);
        }
    }
    if members.len() < 2 {
        return Err(HomdpError::PackingExhausted { achieved: members.len() });
    }
    let mut min_h = usize::MAX;
    for i in 0..members.len() {
        for j in i + 1..members.len() {
            min_h = min_h.min(hamming(&members[i], &members[j]));
        }
    }
    Ok(PackingSet { members, min_pairwise_hamming: min_h })
}

/// Two-instance suboptimality of one policy.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparabilityReport {
    pub gap_u: f64,
    pub gap_u2: f64,
    pub gap_sum: f64,
    /// `eps / 8`.
    pub lower: f64,
    pub holds: bool,
    /// Expected number of `(parent, leaf observation)` cells where the
    /// policy's last action differs from the posterior-argmax choice.
    pub disagreements_u: f64,
    pub disagreements_u2: f64,
    /// Largest deviation from `gap = 2 eps N / (Y'X')` over both instances.
    pub identity_error: f64,
}

/// Probability that `pi` plays `a` at the last step of the path to parent
/// `i` with final observation `y`, averaging over its own earlier draws.
fn last_action_prob(spec: &HardInstanceSpec, pi: &(impl HistoryPolicy + ?Sized), i: usize, y: usize, a: usize) -> f64 {
    let h = spec.horizon();
    // Observation path: root emits Y_UP, then the bits leading to the parent.
    let node = spec.parent_node(i);
    let mut bits = Vec::new();
    let mut n = node;
    while n > 0 {
        bits.push(if n % 2 == 1 { Y_UP } else { Y_DOWN });
        n = (n - 1) / 2;
    }
    bits.reverse();
    let mut obs = vec![Y_UP];
    obs.extend(bits);
    obs.push(y);
    debug_assert_eq!(obs.len(), h);
    fn go(pi: &(impl HistoryPolicy + ?Sized), obs: &[usize], hist: &mut ObservedHistory, a: usize) -> f64 {
        let step = hist.acts.len();
        hist.obs.push(obs[step]);
        let dist = pi.decide(hist);
        let out = if step + 1 == obs.len() {
            dist.prob(a, 2)
        } else {
            let mut s = 0.0;
            for (b, p) in dist.support(2) {
                hist.acts.push(b);
                s += p * go(pi, obs, hist, a);
                hist.acts.pop();
            }
            s
        };
        hist.obs.pop();
        out
    }
    go(pi, &obs, &mut ObservedHistory::default(), a)
}

/// Expected disagreement count `N(pi, pi*_u)` over all parents and leaf
/// observations.
pub fn disagreements(spec: &HardInstanceSpec, pi: &(impl HistoryPolicy + ?Sized)) -> f64 {
    let star = posterior_argmax_policy(spec);
    let mut n = 0.0;
    for i in 0..spec.num_parents() {
        for y in 2..spec.y {
            n += 1.0 - last_action_prob(spec, pi, i, y, star.action(i, y));
        }
    }
    n
}

/// Exact `v_u(pi*_u) - v_u(pi) + v_u'(pi*_u') - v_u'(pi)` against `eps / 8`,
/// plus the per-instance identity `gap = 2 eps N / (Y'X')`.
pub fn separability_check(
    spec_u: &HardInstanceSpec,
    spec_u2: &HardInstanceSpec,
    pi: &(impl HistoryPolicy + ?Sized),
) -> Result<SeparabilityReport> {
    if spec_u.x != spec_u2.x || spec_u.y != spec_u2.y || spec_u.epsilon != spec_u2.epsilon {
        return Err(HomdpError::DimensionMismatch(
            "instances must share X, Y and epsilon".into(),
        ));
    }
    let eps = spec_u.epsilon;
    let scale = 2.0 * eps / (spec_u.y_prime() * spec_u.x_prime()) as f64;
    let mut gaps = [0.0; 2];
    let mut ns = [0.0; 2];
    let mut identity_error: f64 = 0.0;
    for (k, spec) in [spec_u, spec_u2].into_iter().enumerate() {
        let model = build_hard_instance(spec)?;
        let (star, v_star) = optimal_value_hard(spec, &model)?;
        let v = eval_policy_enum(&model.pomdp(), pi, Budget::default())?;
        gaps[k] = v_star - v;
        ns[k] = disagreements(spec, pi);
        identity_error = identity_error.max((gaps[k] - scale * ns[k]).abs());
        debug_assert_eq!(star.spec_x, spec.x);
    }
    let gap_sum = gaps[0] + gaps[1];
    let lower = eps / 8.0;
    Ok(SeparabilityReport {
        gap_u: gaps[0],
        gap_u2: gaps[1],
        gap_sum,
        lower,
        holds: gap_sum >= lower - 1e-9,
        disagreements_u: ns[0],
        disagreements_u2: ns[1],
        identity_error,
    })
}

/// Sidecar written next to a generated instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardSidecar {
    pub spec: HardInstanceSpec,
    pub horizon: usize,
    pub x_prime: usize,
    pub y_prime: usize,
    pub dummy_state: usize,
    pub layout: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub packing: Option<PackingSet>,
}

impl HardSidecar {
    pub fn new(spec: &HardInstanceSpec, packing: Option<PackingSet>) -> Self {
        HardSidecar {
            spec: spec.clone(),
            horizon: spec.horizon(),
            x_prime: spec.x_prime(),
            y_prime: spec.y_prime(),
            dummy_state: spec.dummy_state(),
            layout: "level-order tree, children of n are 2n+1 (upper) and 2n+2 (lower); \
                     dummy absorbing state last; obs 0 = up, 1 = down, 2.. = leaf alphabet; \
                     u index = parent * (Y'/2) + (y - 2)"
                .into(),
            packing,
        }
    }
}
