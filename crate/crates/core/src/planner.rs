//! Exact finite-horizon planning and evaluation over the observed-history tree.
//!
//! Everything here is exponential in the horizon. Callers pass a [`Budget`]
//! on the number of history nodes; oversized requests are refused up front.

use std::collections::HashMap;

use crate::error::{HomdpError, Result};
use crate::model::{HistoryKey, HomdpModel, ObservedHistory, Pomdp};
use crate::policy::{ActionDist, HistoryPolicy, TablePolicy};

/// Ties in the argmax are resolved to the lowest action when the values are
/// within this relative tolerance.
const TIE_TOL: f64 = 1e-12;

/// Tolerance for the alpha-vector magnitude check.
const BOUND_TOL: f64 = 1e-9;

/// Limit on the number of observed-history nodes a computation may touch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Budget(pub u128);

impl Default for Budget {
    fn default() -> Self {
        Budget(1_000_000)
    }
}

impl Budget {
    pub fn check(&self, pomdp: &Pomdp<'_>) -> Result<()> {
        let required = history_count(pomdp.num_obs(), pomdp.num_actions(), pomdp.horizon);
        if required > self.0 {
            Err(HomdpError::BudgetExceeded { required, budget: self.0 })
        } else {
            Ok(())
        }
    }
}

/// Number of decision histories `sum_{h=1}^{H} Y^h A^{h-1}`, saturating.
pub fn history_count(num_obs: usize, num_actions: usize, horizon: usize) -> u128 {
    let (y, a) = (num_obs as u128, num_actions as u128);
    let mut level: u128 = y;
    let mut total: u128 = 0;
    for h in 1..=horizon {
        total = total.saturating_add(level);
        if h < horizon {
            level = level.saturating_mul(y).saturating_mul(a);
        }
    }
    total
}

/// Posterior over latent states.
#[derive(Clone, Debug, PartialEq)]
pub struct Belief {
    pub probs: Vec<f64>,
}

impl Belief {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(HomdpError::InvalidArgument(format!(
                "belief {probs:?} is not a distribution"
            )));
        }
        Ok(Self { probs })
    }

    pub fn point(num_states: usize, x: usize) -> Self {
        let mut probs = vec![0.0; num_states];
        probs[x] = 1.0;
        Self { probs }
    }

    /// Belief after the first observation: `b(x) ∝ rho(x) O(y|x)`.
    pub fn initial(pomdp: &Pomdp<'_>, y: usize) -> Result<Self> {
        let joint: Vec<f64> = (0..pomdp.num_states())
            .map(|x| pomdp.rho[x] * pomdp.emit.get(x, y))
            .collect();
        let z: f64 = joint.iter().sum();
        if z <= 0.0 {
            return Err(HomdpError::ImpossibleObservation {
                belief: pomdp.rho.to_vec(),
                action: usize::MAX,
                obs: y,
            });
        }
        Ok(Self { probs: joint.into_iter().map(|p| p / z).collect() })
    }
}

/// Predicted next-state distribution `sum_x b(x) T(.|x, a)`.
fn predict(pomdp: &Pomdp<'_>, b: &[f64], a: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (x, &bx) in b.iter().enumerate() {
        if bx == 0.0 {
            continue;
        }
        for (o, &t) in out.iter_mut().zip(pomdp.trans.row(x, a)) {
            *o += bx * t;
        }
    }
}

/// Bayes filter step:
/// `b'(x') = O(y'|x') sum_x b(x) T(x'|x,a) / normalizer`.
pub fn belief_update(pomdp: &Pomdp<'_>, b: &Belief, a: usize, y_next: usize) -> Result<Belief> {
    let nx = pomdp.num_states();
    if b.probs.len() != nx {
        return Err(HomdpError::DimensionMismatch(format!(
            "belief has {} entries, model has {nx} states",
            b.probs.len()
        )));
    }
    if a >= pomdp.num_actions() {
        return Err(HomdpError::IdOutOfRange { kind: "action", id: a, size: pomdp.num_actions() });
    }
    if y_next >= pomdp.num_obs() {
        return Err(HomdpError::IdOutOfRange { kind: "observation", id: y_next, size: pomdp.num_obs() });
    }
    let mut next = vec![0.0; nx];
    predict(pomdp, &b.probs, a, &mut next);
    for (x, v) in next.iter_mut().enumerate() {
        *v *= pomdp.emit.get(x, y_next);
    }
    let z: f64 = next.iter().sum();
    if z <= 0.0 {
        return Err(HomdpError::ImpossibleObservation {
            belief: b.probs.clone(),
            action: a,
            obs: y_next,
        });
    }
    next.iter_mut().for_each(|v| *v /= z);
    Ok(Belief { probs: next })
}

/// Alpha vectors at one history `tau_h`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaNode {
    /// 1-based step `h` (number of observations in the history).
    pub step: usize,
    /// `alpha(tau_h)(x)`.
    pub state: Vec<f64>,
    /// `alpha(tau_h)(x, a)` stored at `x * A + a`.
    pub action: Vec<f64>,
}

/// Alpha vectors for every history of a fixed policy.
///
/// For every `tau_h`, `V_h(b, tau_h) = b . alpha(tau_h)` and
/// `Q_h(b, tau_h, a) = b . alpha(tau_h)(., a)`.
#[derive(Clone, Debug)]
pub struct AlphaTree {
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    /// Largest reward in the table the tree was built with.
    pub bound_g: f64,
    /// `sum_x rho(x) sum_y O(y|x) alpha(y)(x)`.
    pub implied_value: f64,
    nodes: HashMap<HistoryKey, AlphaNode>,
}

impl AlphaTree {
    pub fn node(&self, history: &ObservedHistory) -> Option<&AlphaNode> {
        self.nodes.get(&HistoryKey::of(history))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &AlphaNode> {
        self.nodes.values()
    }

    /// Every entry at step `h` must lie in `[0, G (H - h + 1)]`.
    pub fn check_bounds(&self) -> std::result::Result<(), String> {
        for node in self.nodes.values() {
            let cap = self.bound_g * (self.horizon - node.step + 1) as f64;
            let tol = BOUND_TOL * cap.max(1.0);
            for &v in node.state.iter().chain(&node.action) {
                if v < -tol || v > cap + tol {
                    return Err(format!(
                        "alpha entry {v} at step {} outside [0, {cap}]",
                        node.step
                    ));
                }
            }
        }
        Ok(())
    }
}

fn checked_dist(
    policy: &(impl HistoryPolicy + ?Sized),
    history: &ObservedHistory,
    num_actions: usize,
) -> Result<ActionDist> {
    let d = policy.decide(history);
    if d.is_valid(num_actions) {
        Ok(d)
    } else {
        Err(HomdpError::UndefinedPolicy { history: history.to_string() })
    }
}

/// Exact alpha vectors of `policy` under `pomdp` (whose reward is the one
/// used), over the full history tree, with `alpha_{H+1} = 0`.
pub fn alpha_backup(
    pomdp: &Pomdp<'_>,
    policy: &(impl HistoryPolicy + ?Sized),
    budget: Budget,
) -> Result<AlphaTree> {
    pomdp.check()?;
    budget.check(pomdp)?;
    let mut nodes = HashMap::new();
    let mut history = ObservedHistory::default();
    let mut implied_value = 0.0;
    for y in 0..pomdp.num_obs() {
        history.obs.push(y);
        let alpha = backup_node(pomdp, policy, &mut history, &mut nodes)?;
        history.obs.pop();
        for x in 0..pomdp.num_states() {
            implied_value += pomdp.rho[x] * pomdp.emit.get(x, y) * alpha[x];
        }
    }
    let tree = AlphaTree {
        horizon: pomdp.horizon,
        num_states: pomdp.num_states(),
        num_actions: pomdp.num_actions(),
        bound_g: pomdp.reward.max(),
        implied_value,
        nodes,
    };
    debug_assert!(tree.check_bounds().is_ok(), "{:?}", tree.check_bounds());
    Ok(tree)
}

fn backup_node(
    pomdp: &Pomdp<'_>,
    policy: &(impl HistoryPolicy + ?Sized),
    history: &mut ObservedHistory,
    nodes: &mut HashMap<HistoryKey, AlphaNode>,
) -> Result<Vec<f64>> {
    let (nx, ny, na) = (pomdp.num_states(), pomdp.num_obs(), pomdp.num_actions());
    let step = history.len();
    let dist = checked_dist(policy, history, na)?;

    let mut action = vec![0.0; nx * na];
    for x in 0..nx {
        for a in 0..na {
            action[x * na + a] = pomdp.reward.get(x, a);
        }
    }
    if step < pomdp.horizon {
        let mut g = vec![0.0; nx];
        for a in 0..na {
            // g(x') = sum_y' O(y'|x') alpha_{h+1, tau a y'}(x')
            g.iter_mut().for_each(|v| *v = 0.0);
            history.acts.push(a);
            for y in 0..ny {
                history.obs.push(y);
                let child = backup_node(pomdp, policy, history, nodes)?;
                history.obs.pop();
                for (xn, gv) in g.iter_mut().enumerate() {
                    *gv += pomdp.emit.get(xn, y) * child[xn];
                }
            }
            history.acts.pop();
            for x in 0..nx {
                let cont: f64 = pomdp.trans.row(x, a).iter().zip(&g).map(|(t, v)| t * v).sum();
                action[x * na + a] += cont;
            }
        }
    }
    let mut state = vec![0.0; nx];
    for (a, p) in dist.support(na) {
        for x in 0..nx {
            state[x] += p * action[x * na + a];
        }
    }
    nodes.insert(
        HistoryKey::of(history),
        AlphaNode { step, state: state.clone(), action },
    );
    Ok(state)
}

/// Exact value and state-action occupancy of a policy.
#[derive(Clone, Debug)]
pub struct Occupancy {
    pub value: f64,
    /// `P(x_h = x, a_h = a)` at `[h-1][x * A + a]`.
    pub state_action: Vec<Vec<f64>>,
    /// `P(x_h = x)` at `[h-1][x]` for `h = 1..=H+1`.
    pub state: Vec<Vec<f64>>,
}

impl Occupancy {
    pub fn state_action_at(&self, step: usize, x: usize, a: usize) -> f64 {
        let na = self.state_action[step - 1].len() / self.state[0].len();
        self.state_action[step - 1][x * na + a]
    }
}

/// Depth-first enumeration of latent trajectories `(x_1, y_1, a_1, ...)`,
/// skipping zero-probability branches.
pub fn occupancy_enum(
    pomdp: &Pomdp<'_>,
    policy: &(impl HistoryPolicy + ?Sized),
    budget: Budget,
) -> Result<Occupancy> {
    pomdp.check()?;
    budget.check(pomdp)?;
    let (nx, na) = (pomdp.num_states(), pomdp.num_actions());
    let mut occ = Occupancy {
        value: 0.0,
        state_action: vec![vec![0.0; nx * na]; pomdp.horizon],
        state: vec![vec![0.0; nx]; pomdp.horizon + 1],
    };
    let mut history = ObservedHistory::default();
    for x in 0..nx {
        let p = pomdp.rho[x];
        if p > 0.0 {
            enum_node(pomdp, policy, x, p, &mut history, &mut occ)?;
        }
    }
    Ok(occ)
}

fn enum_node(
    pomdp: &Pomdp<'_>,
    policy: &(impl HistoryPolicy + ?Sized),
    x: usize,
    prob: f64,
    history: &mut ObservedHistory,
    occ: &mut Occupancy,
) -> Result<()> {
    let na = pomdp.num_actions();
    let h = history.len();
    occ.state[h][x] += prob;
    if h == pomdp.horizon {
        return Ok(());
    }
    for (y, &py) in pomdp.emit.row(x).iter().enumerate() {
        if py <= 0.0 {
            continue;
        }
        history.obs.push(y);
        let dist = checked_dist(policy, history, na)?;
        for (a, pa) in dist.support(na) {
            let p = prob * py * pa;
            occ.state_action[h][x * na + a] += p;
            occ.value += p * pomdp.reward.get(x, a);
            history.acts.push(a);
            for (xn, &t) in pomdp.trans.row(x, a).iter().enumerate() {
                if t > 0.0 {
                    enum_node(pomdp, policy, xn, p * t, history, occ)?;
                }
            }
            history.acts.pop();
        }
        history.obs.pop();
    }
    Ok(())
}

/// `v(pi) = E_pi[sum_h r(x_h, a_h)]` by latent-trajectory enumeration.
pub fn eval_policy_enum(
    pomdp: &Pomdp<'_>,
    policy: &(impl HistoryPolicy + ?Sized),
    budget: Budget,
) -> Result<f64> {
    Ok(occupancy_enum(pomdp, policy, budget)?.value)
}

/// Output of the optimal planner.
#[derive(Clone, Debug)]
pub struct PlanResult {
    pub policy: TablePolicy,
    /// Planned value `v_{M(T,O,r)}(policy)` from the belief recursion.
    pub value: f64,
    pub alpha: AlphaTree,
}

/// Optimal deterministic history policy by backward induction over the
/// history tree: at each reachable `tau_h` with filtered belief `b`,
///
/// `Q(tau, a) = b . r(., a) + sum_y' P(y' | b, a) V(tau a y')`,
///
/// and the policy takes the lowest-index maximizer. Zero-probability
/// histories are not planned for; the policy plays action 0 there.
pub fn pop_plan(pomdp: &Pomdp<'_>, budget: Budget) -> Result<PlanResult> {
    pomdp.check()?;
    budget.check(pomdp)?;
    let mut policy = TablePolicy::with_fallback(0);
    let mut history = ObservedHistory::default();
    let mut scratch = Scratch::new(pomdp.num_states(), pomdp.horizon);
    let mut value = 0.0;
    for y in 0..pomdp.num_obs() {
        let b = match Belief::initial(pomdp, y) {
            Ok(b) => b,
            Err(_) => continue,
        };
        let py: f64 = (0..pomdp.num_states()).map(|x| pomdp.rho[x] * pomdp.emit.get(x, y)).sum();
        history.obs.push(y);
        value += py * plan_node(pomdp, &b.probs, &mut history, &mut policy, &mut scratch);
        history.obs.pop();
    }
    let alpha = alpha_backup(pomdp, &policy, budget)?;
    debug_assert!(
        (alpha.implied_value - value).abs() <= 1e-8 * value.abs().max(1.0),
        "alpha-implied value {} disagrees with planned value {value}",
        alpha.implied_value
    );
    Ok(PlanResult { policy, value, alpha })
}

struct Scratch {
    /// Per-depth predicted distributions, reused across siblings.
    pred: Vec<Vec<f64>>,
}

impl Scratch {
    fn new(nx: usize, horizon: usize) -> Self {
        Self { pred: vec![vec![0.0; nx]; horizon + 1] }
    }
}

fn plan_node(
    pomdp: &Pomdp<'_>,
    belief: &[f64],
    history: &mut ObservedHistory,
    policy: &mut TablePolicy,
    scratch: &mut Scratch,
) -> f64 {
    let (nx, ny, na) = (pomdp.num_states(), pomdp.num_obs(), pomdp.num_actions());
    let step = history.len();
    let mut best_a = 0;
    let mut best_q = f64::NEG_INFINITY;
    for a in 0..na {
        let mut q: f64 = (0..nx).map(|x| belief[x] * pomdp.reward.get(x, a)).sum();
        if step < pomdp.horizon {
            let mut pred = std::mem::take(&mut scratch.pred[step]);
            predict(pomdp, belief, a, &mut pred);
            history.acts.push(a);
            let mut next = vec![0.0; nx];
            for y in 0..ny {
                let mut z = 0.0;
                for x in 0..nx {
                    next[x] = pred[x] * pomdp.emit.get(x, y);
                    z += next[x];
                }
                if z <= 0.0 {
                    continue;
                }
                next.iter_mut().for_each(|v| *v /= z);
                history.obs.push(y);
                q += z * plan_node(pomdp, &next, history, policy, scratch);
                history.obs.pop();
            }
            history.acts.pop();
            scratch.pred[step] = pred;
        }
        if a == 0 || q > best_q + TIE_TOL * best_q.abs().max(1.0) {
            best_q = q;
            best_a = a;
        }
    }
    policy.insert(history, best_a);
    best_q
}

/// Both sides of the simulation-lemma inequality for one policy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimulationGap {
    /// `|v(pi) - v_hat(pi)|`.
    pub lhs: f64,
    /// `H * E_pi sum_h (||O*(.|x_h) - O_hat(.|x_h)||_1 + ||T*(.|x_h,a_h) - T_hat(.|x_h,a_h)||_1)`.
    pub rhs_bound: f64,
}

impl SimulationGap {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs_bound + 1e-9
    }
}

/// Evaluates both sides of the simulation lemma; the expectation on the right
/// is taken under `m_true`.
pub fn simulation_gap_check(
    m_true: &HomdpModel,
    m_hat: &HomdpModel,
    policy: &(impl HistoryPolicy + ?Sized),
    budget: Budget,
) -> Result<SimulationGap> {
    if m_true.num_states() != m_hat.num_states()
        || m_true.num_obs() != m_hat.num_obs()
        || m_true.num_actions() != m_hat.num_actions()
        || m_true.horizon != m_hat.horizon
    {
        return Err(HomdpError::DimensionMismatch(
            "models must share X, Y, A and H".into(),
        ));
    }
    if m_true.reward != m_hat.reward || m_true.rho != m_hat.rho {
        return Err(HomdpError::DimensionMismatch(
            "models must share the reward and initial distribution".into(),
        ));
    }
    let occ = occupancy_enum(&m_true.pomdp(), policy, budget)?;
    let v_hat = eval_policy_enum(&m_hat.pomdp(), policy, budget)?;
    let (nx, na) = (m_true.num_states(), m_true.num_actions());

    let l1 = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>();
    let mut expected = 0.0;
    for step in 0..m_true.horizon {
        for x in 0..nx {
            let o_gap = l1(m_true.emit.row(x), m_hat.emit.row(x));
            for a in 0..na {
                let w = occ.state_action[step][x * na + a];
                if w > 0.0 {
                    let t_gap = l1(m_true.trans.row(x, a), m_hat.trans.row(x, a));
                    expected += w * (o_gap + t_gap);
                }
            }
        }
    }
    Ok(SimulationGap {
        lhs: (occ.value - v_hat).abs(),
        rhs_bound: m_true.horizon as f64 * expected,
    })
}
