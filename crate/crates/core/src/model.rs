//! Model tables, the learner/environment split, and observed histories.
//!
//! All ids are dense and 0-based. Probability tables are stored row-major in
//! flat vectors; rows are addressed through the accessor methods.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{HomdpError, Result};

/// Row-sum tolerance used by validation and by file loading.
pub const PROB_TOL: f64 = 1e-9;

/// Latent transition kernel `T(x' | x, a)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionTable {
    num_states: usize,
    num_actions: usize,
    data: Vec<f64>,
}

impl TransitionTable {
    pub fn new(num_states: usize, num_actions: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != num_states * num_actions * num_states {
            return Err(HomdpError::DimensionMismatch(format!(
                "transition table needs {} entries, got {}",
                num_states * num_actions * num_states,
                data.len()
            )));
        }
        Ok(Self { num_states, num_actions, data })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_states as f64;
        Self {
            num_states,
            num_actions,
            data: vec![p; num_states * num_actions * num_states],
        }
    }

    /// Builds from an `[X][A][X]` nested array.
    pub fn from_nested(rows: &[Vec<Vec<f64>>]) -> Result<Self> {
        let num_states = rows.len();
        let num_actions = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(num_states * num_actions * num_states);
        for (x, per_action) in rows.iter().enumerate() {
            if per_action.len() != num_actions {
                return Err(HomdpError::DimensionMismatch(format!(
                    "trans[{x}] has {} actions, expected {num_actions}",
                    per_action.len()
                )));
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != num_states {
                    return Err(HomdpError::DimensionMismatch(format!(
                        "trans[{x}][{a}] has length {}, expected {num_states}",
                        row.len()
                    )));
                }
                data.extend_from_slice(row);
            }
        }
        Self::new(num_states, num_actions, data)
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.num_states)
            .map(|x| (0..self.num_actions).map(|a| self.row(x, a).to_vec()).collect())
            .collect()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn row(&self, x: usize, a: usize) -> &[f64] {
        let start = (x * self.num_actions + a) * self.num_states;
        &self.data[start..start + self.num_states]
    }

    #[inline]
    pub fn row_mut(&mut self, x: usize, a: usize) -> &mut [f64] {
        let start = (x * self.num_actions + a) * self.num_states;
        &mut self.data[start..start + self.num_states]
    }

    #[inline]
    pub fn get(&self, x: usize, a: usize, next: usize) -> f64 {
        self.data[(x * self.num_actions + a) * self.num_states + next]
    }
}

/// Emission kernel `O(y | x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmissionTable {
    num_states: usize,
    num_obs: usize,
    data: Vec<f64>,
}

impl EmissionTable {
    pub fn new(num_states: usize, num_obs: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != num_states * num_obs {
            return Err(HomdpError::DimensionMismatch(format!(
                "emission table needs {} entries, got {}",
                num_states * num_obs,
                data.len()
            )));
        }
        Ok(Self { num_states, num_obs, data })
    }

    pub fn uniform(num_states: usize, num_obs: usize) -> Self {
        Self {
            num_states,
            num_obs,
            data: vec![1.0 / num_obs as f64; num_states * num_obs],
        }
    }

    /// Builds from an `[X][Y]` nested array.
    pub fn from_nested(rows: &[Vec<f64>]) -> Result<Self> {
        let num_states = rows.len();
        let num_obs = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(num_states * num_obs);
        for (x, row) in rows.iter().enumerate() {
            if row.len() != num_obs {
                return Err(HomdpError::DimensionMismatch(format!(
                    "emit[{x}] has length {}, expected {num_obs}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(num_states, num_obs, data)
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        (0..self.num_states).map(|x| self.row(x).to_vec()).collect()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_obs(&self) -> usize {
        self.num_obs
    }

    #[inline]
    pub fn row(&self, x: usize) -> &[f64] {
        &self.data[x * self.num_obs..(x + 1) * self.num_obs]
    }

    #[inline]
    pub fn row_mut(&mut self, x: usize) -> &mut [f64] {
        &mut self.data[x * self.num_obs..(x + 1) * self.num_obs]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[x * self.num_obs + y]
    }
}

/// Deterministic reward `r(x, a)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardTable {
    num_states: usize,
    num_actions: usize,
    data: Vec<f64>,
}

impl RewardTable {
    pub fn new(num_states: usize, num_actions: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != num_states * num_actions {
            return Err(HomdpError::DimensionMismatch(format!(
                "reward table needs {} entries, got {}",
                num_states * num_actions,
                data.len()
            )));
        }
        Ok(Self { num_states, num_actions, data })
    }

    pub fn constant(num_states: usize, num_actions: usize, value: f64) -> Self {
        Self {
            num_states,
            num_actions,
            data: vec![value; num_states * num_actions],
        }
    }

    pub fn from_fn(num_states: usize, num_actions: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(num_states * num_actions);
        for x in 0..num_states {
            for a in 0..num_actions {
                data.push(f(x, a));
            }
        }
        Self { num_states, num_actions, data }
    }

    pub fn from_nested(rows: &[Vec<f64>]) -> Result<Self> {
        let num_states = rows.len();
        let num_actions = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(num_states * num_actions);
        for (x, row) in rows.iter().enumerate() {
            if row.len() != num_actions {
                return Err(HomdpError::DimensionMismatch(format!(
                    "reward[{x}] has length {}, expected {num_actions}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(num_states, num_actions, data)
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        (0..self.num_states)
            .map(|x| self.data[x * self.num_actions..(x + 1) * self.num_actions].to_vec())
            .collect()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn get(&self, x: usize, a: usize) -> f64 {
        self.data[x * self.num_actions + a]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

/// One broken invariant, with its location.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    Dimension(String),
    RowSum { table: &'static str, location: String, sum: f64 },
    Negative { table: &'static str, location: String, value: f64 },
    NotFinite { table: &'static str, location: String },
    RewardRange { state: usize, action: usize, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Dimension(msg) => write!(f, "dimension: {msg}"),
            Violation::RowSum { table, location, sum } => {
                write!(f, "{table} row {location} sums to {sum}")
            }
            Violation::Negative { table, location, value } => {
                write!(f, "{table} entry {location} is negative ({value})")
            }
            Violation::NotFinite { table, location } => {
                write!(f, "{table} entry {location} is not finite")
            }
            Violation::RewardRange { state, action, value } => {
                write!(f, "reward (x={state}, a={action}) = {value} outside [0, 1]")
            }
        }
    }
}

/// A full HOMDP: initial distribution, latent kernels, reward and horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct HomdpModel {
    pub horizon: usize,
    pub rho: Vec<f64>,
    pub trans: TransitionTable,
    pub emit: EmissionTable,
    pub reward: RewardTable,
}

impl HomdpModel {
    /// Builds a model and rejects it unless every invariant holds.
    pub fn new(
        horizon: usize,
        rho: Vec<f64>,
        trans: TransitionTable,
        emit: EmissionTable,
        reward: RewardTable,
    ) -> Result<Self> {
        let m = Self { horizon, rho, trans, emit, reward };
        let violations = validate_model(&m);
        if violations.is_empty() {
            Ok(m)
        } else {
            Err(HomdpError::InvalidModel(violations))
        }
    }

    pub fn num_states(&self) -> usize {
        self.rho.len()
    }

    pub fn num_obs(&self) -> usize {
        self.emit.num_obs()
    }

    pub fn num_actions(&self) -> usize {
        self.reward.num_actions()
    }

    /// Planning view over this model's own tables.
    pub fn pomdp(&self) -> Pomdp<'_> {
        Pomdp {
            rho: &self.rho,
            trans: &self.trans,
            emit: &self.emit,
            reward: &self.reward,
            horizon: self.horizon,
        }
    }

    pub fn learner_view(&self) -> LearnerView {
        LearnerView {
            num_states: self.num_states(),
            num_obs: self.num_obs(),
            num_actions: self.num_actions(),
            horizon: self.horizon,
            rho: self.rho.clone(),
            reward: self.reward.clone(),
        }
    }
}

/// Checks every model invariant and reports each violation with its location.
pub fn validate_model(m: &HomdpModel) -> Vec<Violation> {
    let mut out = Vec::new();
    let nx = m.rho.len();
    let ny = m.emit.num_obs();
    let na = m.reward.num_actions();
    if m.horizon == 0 {
        out.push(Violation::Dimension("horizon must be >= 1".into()));
    }
    if nx == 0 || ny == 0 || na == 0 {
        out.push(Violation::Dimension(format!(
            "X={nx}, Y={ny}, A={na}: all must be >= 1"
        )));
        return out;
    }
    if m.trans.num_states() != nx || m.trans.num_actions() != na {
        out.push(Violation::Dimension(format!(
            "trans is {}x{}x{}, expected {nx}x{na}x{nx}",
            m.trans.num_states(),
            m.trans.num_actions(),
            m.trans.num_states()
        )));
    }
    if m.emit.num_states() != nx {
        out.push(Violation::Dimension(format!(
            "emit has {} rows, expected {nx}",
            m.emit.num_states()
        )));
    }
    if m.reward.num_states() != nx {
        out.push(Violation::Dimension(format!(
            "reward has {} rows, expected {nx}",
            m.reward.num_states()
        )));
    }
    if !out.is_empty() {
        return out;
    }

    check_row(&mut out, "rho", "()".into(), &m.rho);
    for x in 0..nx {
        for a in 0..na {
            check_row(&mut out, "trans", format!("(x={x}, a={a})"), m.trans.row(x, a));
        }
        check_row(&mut out, "emit", format!("(x={x})"), m.emit.row(x));
        for a in 0..na {
            let r = m.reward.get(x, a);
            if !(0.0..=1.0).contains(&r) {
                out.push(Violation::RewardRange { state: x, action: a, value: r });
            }
        }
    }
    out
}

/// Row-stochasticity violations of a standalone transition table.
pub fn validate_transitions(t: &TransitionTable) -> Vec<Violation> {
    let mut out = Vec::new();
    for x in 0..t.num_states() {
        for a in 0..t.num_actions() {
            check_row(&mut out, "trans", format!("(x={x}, a={a})"), t.row(x, a));
        }
    }
    out
}

/// Row-stochasticity violations of a standalone emission table.
pub fn validate_emissions(o: &EmissionTable) -> Vec<Violation> {
    let mut out = Vec::new();
    for x in 0..o.num_states() {
        check_row(&mut out, "emit", format!("(x={x})"), o.row(x));
    }
    out
}

fn check_row(out: &mut Vec<Violation>, table: &'static str, location: String, row: &[f64]) {
    for (i, &p) in row.iter().enumerate() {
        if !p.is_finite() {
            out.push(Violation::NotFinite { table, location: format!("{location}[{i}]") });
            return;
        }
        if p < 0.0 {
            out.push(Violation::Negative { table, location: format!("{location}[{i}]"), value: p });
        }
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        out.push(Violation::RowSum { table, location, sum });
    }
}

/// Borrowed planning model `M(T, O, r)`.
///
/// Unlike [`HomdpModel`] the reward may be any nonnegative bounded table, so
/// optimistic rewards with bonuses can be planned against.
#[derive(Clone, Copy, Debug)]
pub struct Pomdp<'a> {
    pub rho: &'a [f64],
    pub trans: &'a TransitionTable,
    pub emit: &'a EmissionTable,
    pub reward: &'a RewardTable,
    pub horizon: usize,
}

impl<'a> Pomdp<'a> {
    pub fn num_states(&self) -> usize {
        self.rho.len()
    }

    pub fn num_obs(&self) -> usize {
        self.emit.num_obs()
    }

    pub fn num_actions(&self) -> usize {
        self.reward.num_actions()
    }

    /// Dimension and reward-sign checks needed before planning.
    pub fn check(&self) -> Result<()> {
        let nx = self.num_states();
        let na = self.num_actions();
        if self.horizon == 0 || nx == 0 || na == 0 || self.num_obs() == 0 {
            return Err(HomdpError::DimensionMismatch(
                "X, Y, A and H must all be positive".into(),
            ));
        }
        if self.trans.num_states() != nx
            || self.trans.num_actions() != na
            || self.emit.num_states() != nx
            || self.reward.num_states() != nx
        {
            return Err(HomdpError::DimensionMismatch(format!(
                "rho has {nx} states, trans {}x{}, emit {} rows, reward {}x{}",
                self.trans.num_states(),
                self.trans.num_actions(),
                self.emit.num_states(),
                self.reward.num_states(),
                na
            )));
        }
        let bad: Vec<Violation> = self
            .reward
            .values()
            .iter()
            .enumerate()
            .filter(|(_, r)| !r.is_finite() || **r < 0.0)
            .map(|(i, r)| Violation::Negative {
                table: "reward",
                location: format!("(x={}, a={})", i / na, i % na),
                value: *r,
            })
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(HomdpError::InvalidModel(bad))
        }
    }
}

/// Everything a learner is allowed to know up front: sizes, horizon, `rho`
/// and the reward. The latent kernels stay inside [`Environment`].
#[derive(Clone, Debug, PartialEq)]
pub struct LearnerView {
    pub num_states: usize,
    pub num_obs: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub rho: Vec<f64>,
    pub reward: RewardTable,
}

impl LearnerView {
    /// Planning view combining the known parts with supplied kernels.
    pub fn pomdp<'a>(
        &'a self,
        trans: &'a TransitionTable,
        emit: &'a EmissionTable,
        reward: &'a RewardTable,
    ) -> Pomdp<'a> {
        Pomdp { rho: &self.rho, trans, emit, reward, horizon: self.horizon }
    }
}

/// The hidden environment. Learners interact through [`Environment::view`]
/// and [`Environment::run_episode`] only.
#[derive(Clone, Debug)]
pub struct Environment {
    model: HomdpModel,
    view: LearnerView,
}

impl Environment {
    pub fn new(model: HomdpModel) -> Result<Self> {
        let violations = validate_model(&model);
        if !violations.is_empty() {
            return Err(HomdpError::InvalidModel(violations));
        }
        let view = model.learner_view();
        Ok(Self { model, view })
    }

    pub fn view(&self) -> &LearnerView {
        &self.view
    }

    pub fn run_episode(
        &self,
        policy: &(impl crate::policy::HistoryPolicy + ?Sized),
        rng: &mut crate::rng::RngStream,
    ) -> Result<crate::sim::EpisodeRecord> {
        crate::sim::run_episode(&self.model, policy, rng)
    }

    /// The true model. Used by regret accounting and test oracles; learning
    /// code never touches it.
    pub fn hidden_model(&self) -> &HomdpModel {
        &self.model
    }
}

/// Observed prefix `(y_{1:h}, a_{1:h-1})` or a full record `(y_{1:h}, a_{1:h})`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObservedHistory {
    pub obs: Vec<usize>,
    pub acts: Vec<usize>,
}

impl ObservedHistory {
    pub fn new(obs: Vec<usize>, acts: Vec<usize>) -> Self {
        Self { obs, acts }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Number of observations, i.e. the step `h` of a decision history.
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty() && self.acts.is_empty()
    }

    /// A policy is queried only where one more action is due.
    pub fn is_decision_point(&self) -> bool {
        !self.obs.is_empty() && self.acts.len() + 1 == self.obs.len()
    }

    pub fn validate(&self, num_obs: usize, num_actions: usize) -> Result<()> {
        let well_formed =
            self.acts.len() == self.obs.len() || self.acts.len() + 1 == self.obs.len();
        if !well_formed {
            return Err(HomdpError::MalformedHistory(format!(
                "{} observations with {} actions",
                self.obs.len(),
                self.acts.len()
            )));
        }
        if let Some(&y) = self.obs.iter().find(|&&y| y >= num_obs) {
            return Err(HomdpError::IdOutOfRange { kind: "observation", id: y, size: num_obs });
        }
        if let Some(&a) = self.acts.iter().find(|&&a| a >= num_actions) {
            return Err(HomdpError::IdOutOfRange { kind: "action", id: a, size: num_actions });
        }
        Ok(())
    }
}

impl fmt::Display for ObservedHistory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, y) in self.obs.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "y{y}")?;
            if let Some(a) = self.acts.get(i) {
                write!(f, " a{a}")?;
            }
        }
        write!(f, "]")
    }
}

/// Full latent record `(x_1, y_1, a_1, ..., x_H, y_H, a_H, x_{H+1})`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTrajectory {
    pub states: Vec<usize>,
    pub obs: Vec<usize>,
    pub acts: Vec<usize>,
    pub rewards: Vec<f64>,
}

/// Canonical byte key of an observed history.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HistoryKey(Vec<u8>);

impl HistoryKey {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        hex::decode(s)
            .map(HistoryKey)
            .map_err(|e| HomdpError::Schema(format!("bad history key {s:?}: {e}")))
    }

    /// Inverse of the canonical encoding.
    pub fn decode(&self) -> Result<ObservedHistory> {
        let b = &self.0;
        let word = |i: usize| -> Result<usize> {
            b.get(2 * i..2 * i + 2)
                .map(|w| u16::from_le_bytes([w[0], w[1]]) as usize)
                .ok_or_else(|| HomdpError::Schema(format!("truncated history key {}", self.to_hex())))
        };
        let n_obs = word(0)?;
        let n_acts = word(1)?;
        if b.len() != 4 + 2 * (n_obs + n_acts) {
            return Err(HomdpError::Schema(format!("history key {} has bad length", self.to_hex())));
        }
        let obs = (0..n_obs).map(|i| word(2 + i)).collect::<Result<Vec<_>>>()?;
        let acts = (0..n_acts).map(|i| word(2 + n_obs + i)).collect::<Result<Vec<_>>>()?;
        Ok(ObservedHistory { obs, acts })
    }

    /// Key without range checks; callers guarantee ids fit in 16 bits.
    pub(crate) fn of(h: &ObservedHistory) -> Self {
        let mut buf = Vec::with_capacity(4 + 2 * (h.obs.len() + h.acts.len()));
        buf.extend_from_slice(&(h.obs.len() as u16).to_le_bytes());
        buf.extend_from_slice(&(h.acts.len() as u16).to_le_bytes());
        for &y in &h.obs {
            buf.extend_from_slice(&(y as u16).to_le_bytes());
        }
        for &a in &h.acts {
            buf.extend_from_slice(&(a as u16).to_le_bytes());
        }
        HistoryKey(buf)
    }
}

/// Injective byte encoding: `u16` observation count, `u16` action count, then
/// each observation and each action as little-endian `u16`. The empty history
/// maps to the four zero bytes.
pub fn canonical_history_key(
    h: &ObservedHistory,
    num_obs: usize,
    num_actions: usize,
) -> Result<HistoryKey> {
    const LIMIT: usize = u16::MAX as usize;
    if h.obs.len() > LIMIT || h.acts.len() > LIMIT {
        return Err(HomdpError::MalformedHistory("history longer than 65535 steps".into()));
    }
    if let Some(&y) = h.obs.iter().find(|&&y| y >= num_obs || y > LIMIT) {
        return Err(HomdpError::IdOutOfRange { kind: "observation", id: y, size: num_obs });
    }
    if let Some(&a) = h.acts.iter().find(|&&a| a >= num_actions || a > LIMIT) {
        return Err(HomdpError::IdOutOfRange { kind: "action", id: a, size: num_actions });
    }
    Ok(HistoryKey::of(h))
}
