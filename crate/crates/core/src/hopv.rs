//! Optimism over version spaces of a finite model class.
//!
//! Episodes are grouped into epochs of `H`. Each epoch picks the
//! `(policy, T, O)` triple with the highest planned value among surviving
//! members, runs `H` rollouts with a uniform action at step `h` of the
//! `h`-th rollout, keeps the step-`h` tuple of each, and drops members whose
//! log-likelihood falls more than a threshold below the best survivor.

use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;

use crate::error::{HomdpError, Result};
use crate::model::{
    validate_emissions, validate_transitions, EmissionTable, Environment, HomdpModel, LearnerView,
    TransitionTable,
};
use crate::planner::{eval_policy_enum, pop_plan, Budget};
use crate::policy::{ExplorePolicy, HistoryPolicy, TablePolicy};
use crate::rng::RngStream;
use crate::runlog::{run_fingerprint, Algorithm, RunConfig, RunLog, RunRow};
use crate::sim::EpisodeRecord;

/// Default cap on `|T_k| * |Theta_k|` plans per epoch.
pub const DEFAULT_MAX_PAIRS: usize = 400;

/// Relative tolerance under which planned values count as tied.
const TIE_TOL: f64 = 1e-12;

/// Finite candidate sets for the latent transition and the emission.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelClass {
    pub transitions: Vec<TransitionTable>,
    pub emissions: Vec<EmissionTable>,
}

/// Whether the true kernels appear in the class, and where.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Realizability {
    pub transition: Option<usize>,
    pub emission: Option<usize>,
}

impl Realizability {
    pub fn holds(&self) -> bool {
        self.transition.is_some() && self.emission.is_some()
    }
}

impl ModelClass {
    /// Checks that both lists are nonempty, share one shape and contain
    /// only proper conditional distributions.
    pub fn new(transitions: Vec<TransitionTable>, emissions: Vec<EmissionTable>) -> Result<Self> {
        if transitions.is_empty() {
            return Err(HomdpError::EmptyClass("transition"));
        }
        if emissions.is_empty() {
            return Err(HomdpError::EmptyClass("emission"));
        }
        let (nx, na, ny) = (transitions[0].num_states(), transitions[0].num_actions(), emissions[0].num_obs());
        for t in &transitions {
            if t.num_states() != nx || t.num_actions() != na {
                return Err(HomdpError::DimensionMismatch("transition class members differ in shape".into()));
            }
            let v = validate_transitions(t);
            if !v.is_empty() {
                return Err(HomdpError::InvalidModel(v));
            }
        }
        for o in &emissions {
            if o.num_states() != nx || o.num_obs() != ny {
                return Err(HomdpError::DimensionMismatch("emission class members differ in shape".into()));
            }
            let v = validate_emissions(o);
            if !v.is_empty() {
                return Err(HomdpError::InvalidModel(v));
            }
        }
        Ok(Self { transitions, emissions })
    }

    pub fn check_shape(&self, view: &LearnerView) -> Result<()> {
        let t = &self.transitions[0];
        let o = &self.emissions[0];
        if t.num_states() != view.num_states || t.num_actions() != view.num_actions || o.num_obs() != view.num_obs {
            return Err(HomdpError::DimensionMismatch(format!(
                "class is X={}, A={}, Y={}; model is X={}, A={}, Y={}",
                t.num_states(),
                t.num_actions(),
                o.num_obs(),
                view.num_states,
                view.num_actions,
                view.num_obs
            )));
        }
        Ok(())
    }

    /// First members equal to the true kernels, entrywise within `tol`.
    pub fn realizability(&self, truth: &HomdpModel, tol: f64) -> Realizability {
        let close = |p: &[f64], q: &[f64]| p.len() == q.len() && p.iter().zip(q).all(|(a, b)| (a - b).abs() <= tol);
        let transition = self.transitions.iter().position(|t| {
            t.num_states() == truth.num_states()
                && t.num_actions() == truth.num_actions()
                && (0..t.num_states())
                    .all(|x| (0..t.num_actions()).all(|a| close(t.row(x, a), truth.trans.row(x, a))))
        });
        let emission = self.emissions.iter().position(|o| {
            o.num_states() == truth.num_states() && (0..o.num_states()).all(|x| close(o.row(x), truth.emit.row(x)))
        });
        Realizability { transition, emission }
    }
}

/// `(x_h, a_h, y_h, x_{h+1})` harvested from one rollout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub obs: usize,
    pub next_state: usize,
}

/// The `H` tuples of one epoch; entry `h - 1` comes from rollout `h`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochData {
    pub tuples: Vec<Transition>,
}

/// Surviving members with running log-likelihoods.
#[derive(Clone, Debug, PartialEq)]
pub struct VersionSpace {
    pub surviving_t: Vec<usize>,
    pub surviving_o: Vec<usize>,
    /// `L1(T) = sum ln T(x~ | x, a)` for every class member, survivor or not.
    pub loglik_t: Vec<f64>,
    /// `L2(O) = sum ln O(y | x)` for every class member.
    pub loglik_o: Vec<f64>,
    pub beta_t: f64,
    pub beta_o: f64,
    /// Tuples folded into each log-likelihood.
    pub terms: usize,
}

impl VersionSpace {
    /// Full class with `beta_T = 2 ln(K' |T| / delta)` and
    /// `beta_Theta = 2 ln(K' |Theta| / delta)`.
    pub fn new(class: &ModelClass, epochs: usize, delta: f64) -> Self {
        let (nt, no) = (class.transitions.len(), class.emissions.len());
        let ke = epochs as f64;
        VersionSpace {
            surviving_t: (0..nt).collect(),
            surviving_o: (0..no).collect(),
            loglik_t: vec![0.0; nt],
            loglik_o: vec![0.0; no],
            beta_t: 2.0 * (ke * nt as f64 / delta).ln(),
            beta_o: 2.0 * (ke * no as f64 / delta).ln(),
            terms: 0,
        }
    }

    /// Adds the epoch's tuples to every member's log-likelihood, then keeps
    /// survivors within `beta` of the best current survivor.
    pub fn update(&mut self, class: &ModelClass, data: &EpochData) {
        for t in &data.tuples {
            for (ll, tt) in self.loglik_t.iter_mut().zip(&class.transitions) {
                *ll += tt.get(t.state, t.action, t.next_state).ln();
            }
            for (ll, o) in self.loglik_o.iter_mut().zip(&class.emissions) {
                *ll += o.get(t.state, t.obs).ln();
            }
        }
        self.terms += data.tuples.len();
        filter(&mut self.surviving_t, &self.loglik_t, self.beta_t);
        filter(&mut self.surviving_o, &self.loglik_o, self.beta_o);
    }

    pub fn pairs(&self) -> usize {
        self.surviving_t.len() * self.surviving_o.len()
    }
}

fn filter(surviving: &mut Vec<usize>, loglik: &[f64], beta: f64) {
    let best = surviving.iter().map(|&i| loglik[i]).fold(f64::NEG_INFINITY, f64::max);
    // When every survivor has likelihood zero, `best - beta` is -inf and all stay.
    surviving.retain(|&i| loglik[i] >= best - beta);
}

/// `pi o_h Unif(A)`: uniform at histories with `h` observations.
pub fn explore_policy<P: HistoryPolicy>(pi: P, h: usize, horizon: usize) -> Result<ExplorePolicy<P>> {
    if h == 0 || h > horizon {
        return Err(HomdpError::StepOutOfRange { step: h, horizon });
    }
    Ok(ExplorePolicy::new(pi, h))
}

/// Winner of the optimistic search.
#[derive(Clone, Debug)]
pub struct Selection {
    pub policy: TablePolicy,
    pub t_index: usize,
    pub o_index: usize,
    /// Planned value `v_{M(T,O)}(policy)` with the true reward.
    pub value: f64,
}

/// Plans on every surviving `(T, O)` pair and keeps the best planned value,
/// ties to the lower transition index, then the lower emission index.
pub fn optimistic_select(
    vs: &VersionSpace,
    class: &ModelClass,
    view: &LearnerView,
    budget: Budget,
    max_pairs: usize,
) -> Result<Selection> {
    if vs.surviving_t.is_empty() {
        return Err(HomdpError::EmptyVersionSpace { which: "transition" });
    }
    if vs.surviving_o.is_empty() {
        return Err(HomdpError::EmptyVersionSpace { which: "emission" });
    }
    if vs.pairs() > max_pairs {
        return Err(HomdpError::BudgetExceeded { required: vs.pairs() as u128, budget: max_pairs as u128 });
    }
    let pairs: Vec<(usize, usize)> = vs
        .surviving_t
        .iter()
        .flat_map(|&t| vs.surviving_o.iter().map(move |&o| (t, o)))
        .collect();
    let plans = pairs
        .par_iter()
        .map(|&(t, o)| {
            let pomdp = view.pomdp(&class.transitions[t], &class.emissions[o], &view.reward);
            pop_plan(&pomdp, budget)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for i in 1..plans.len() {
        let b = plans[best].value;
        if plans[i].value > b + TIE_TOL * b.abs().max(1.0) {
            best = i;
        }
    }
    let (t_index, o_index) = pairs[best];
    let plan = plans.into_iter().nth(best).expect("nonempty");
    Ok(Selection { policy: plan.policy, t_index, o_index, value: plan.value })
}

/// Learner state between epochs.
#[derive(Clone, Debug)]
pub struct HopvState {
    view: LearnerView,
    pub class: ModelClass,
    pub vs: VersionSpace,
    /// Epochs completed.
    pub epoch: usize,
    pub budget: Budget,
    pub max_pairs: usize,
}

#[derive(Clone, Debug)]
pub struct EpochOutcome {
    pub selection: Selection,
    /// Survivor counts used for the selection.
    pub surviving_t: usize,
    pub surviving_o: usize,
    pub records: Vec<EpisodeRecord>,
    pub data: EpochData,
}

impl HopvState {
    pub fn new(view: LearnerView, class: ModelClass, epochs: usize, delta: f64, budget: Budget) -> Result<Self> {
        class.check_shape(&view)?;
        let vs = VersionSpace::new(&class, epochs, delta);
        Ok(Self { view, class, vs, epoch: 0, budget, max_pairs: DEFAULT_MAX_PAIRS })
    }

    pub fn view(&self) -> &LearnerView {
        &self.view
    }

    /// One epoch. Rollout `h` (1-based) of epoch `k` draws from
    /// `rng.derive((k - 1) * H + h)`.
    pub fn run_epoch(&mut self, env: &Environment, rng: &RngStream) -> Result<EpochOutcome> {
        let horizon = self.view.horizon;
        let (surviving_t, surviving_o) = (self.vs.surviving_t.len(), self.vs.surviving_o.len());
        let selection = optimistic_select(&self.vs, &self.class, &self.view, self.budget, self.max_pairs)?;
        let mut records = Vec::with_capacity(horizon);
        let mut data = EpochData { tuples: Vec::with_capacity(horizon) };
        for h in 1..=horizon {
            let pi = explore_policy(&selection.policy, h, horizon)?;
            let index = (self.epoch * horizon + h) as u64;
            let rec = env.run_episode(&pi, &mut rng.derive(index))?;
            data.tuples.push(Transition {
                state: rec.latent[h - 1],
                action: rec.observed.acts[h - 1],
                obs: rec.observed.obs[h - 1],
                next_state: rec.latent[h],
            });
            records.push(rec);
        }
        self.vs.update(&self.class, &data);
        self.epoch += 1;
        Ok(EpochOutcome { selection, surviving_t, surviving_o, records, data })
    }
}

/// Per-epoch survivor sets, recorded after each update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HopvTrace {
    pub surviving_t: Vec<Vec<usize>>,
    pub surviving_o: Vec<Vec<usize>>,
    pub realizability: Option<Realizability>,
}

/// Runs `K' = floor(K / H)` epochs. Regret is charged to the selected
/// policies, not the exploratory rollouts, using exact values.
pub fn run_hopv(env: &Environment, cfg: &RunConfig, class: ModelClass, rng: &RngStream) -> Result<RunLog> {
    run_hopv_traced(env, cfg, class, rng).map(|(log, _)| log)
}

pub fn run_hopv_traced(
    env: &Environment,
    cfg: &RunConfig,
    class: ModelClass,
    rng: &RngStream,
) -> Result<(RunLog, HopvTrace)> {
    cfg.validate()?;
    let view = env.view();
    if cfg.episodes < view.horizon {
        return Err(HomdpError::InvalidArgument(format!(
            "K = {} is smaller than H = {}",
            cfg.episodes, view.horizon
        )));
    }
    let epochs = cfg.episodes / view.horizon;
    let truth = env.hidden_model();
    let fp = run_fingerprint(
        Algorithm::Hopv,
        truth,
        json!({
            "K": cfg.episodes,
            "delta": cfg.delta,
            "transitions": class.transitions.iter().map(TransitionTable::to_nested).collect::<Vec<_>>(),
            "emissions": class.emissions.iter().map(EmissionTable::to_nested).collect::<Vec<_>>(),
        }),
        rng.seed(),
    );
    let mut log = RunLog::new(Algorithm::Hopv, fp);
    let real = class.realizability(truth, 1e-9);
    if real.transition.is_none() {
        log.warnings.push("transition class does not contain the true transition table".into());
    }
    if real.emission.is_none() {
        log.warnings.push("emission class does not contain the true emission table".into());
    }
    let mut trace = HopvTrace { realizability: Some(real), ..Default::default() };
    let mut state = HopvState::new(view.clone(), class, epochs, cfg.delta, cfg.budget)?;
    let v_opt = pop_plan(&truth.pomdp(), cfg.budget)?.value;
    for k in 1..=epochs {
        let start = Instant::now();
        let out = state.run_epoch(env, rng)?;
        let value_hat = eval_policy_enum(&truth.pomdp(), &out.selection.policy, cfg.budget)?;
        log.push(RunRow {
            k,
            value_opt: v_opt,
            value_hat,
            optimistic_value: out.selection.value,
            regret_step: v_opt - value_hat,
            regret_cum: 0.0,
            max_bonus_x: None,
            max_bonus_xa: None,
            surviving_t: Some(out.surviving_t),
            surviving_o: Some(out.surviving_o),
            wallclock_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        trace.surviving_t.push(state.vs.surviving_t.clone());
        trace.surviving_o.push(state.vs.surviving_o.clone());
    }
    Ok((log, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RewardTable;
    use crate::policy::{ActionDist, ConstantPolicy};
    use crate::model::ObservedHistory;

    fn truth() -> HomdpModel {
        HomdpModel::new(
            2,
            vec![0.5, 0.5],
            TransitionTable::from_nested(&[
                vec![vec![0.9, 0.1], vec![0.2, 0.8]],
                vec![vec![0.3, 0.7], vec![0.6, 0.4]],
            ])
            .unwrap(),
            EmissionTable::from_nested(&[vec![0.8, 0.2], vec![0.3, 0.7]]).unwrap(),
            RewardTable::from_nested(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn explore_step_range() {
        assert!(explore_policy(ConstantPolicy(0), 0, 2).is_err());
        assert!(explore_policy(ConstantPolicy(0), 3, 2).is_err());
        let p = explore_policy(ConstantPolicy(1), 1, 2).unwrap();
        assert_eq!(p.decide(&ObservedHistory::new(vec![1], vec![])), ActionDist::Uniform);
        assert_eq!(p.decide(&ObservedHistory::new(vec![1, 0], vec![0])), ActionDist::Point(1));
    }

    #[test]
    fn thresholds() {
        let m = truth();
        let class = ModelClass::new(vec![m.trans.clone(); 4], vec![m.emit.clone(); 2]).unwrap();
        let vs = VersionSpace::new(&class, 100, 0.1);
        assert!((vs.beta_t - 2.0 * 4000f64.ln()).abs() < 1e-12);
        assert!((vs.beta_o - 2.0 * 2000f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn impossible_datum_filters_immediately() {
        let m = truth();
        let blocked = TransitionTable::from_nested(&[
            vec![vec![1.0, 0.0], vec![1.0, 0.0]],
            vec![vec![1.0, 0.0], vec![1.0, 0.0]],
        ])
        .unwrap();
        let class = ModelClass::new(vec![m.trans.clone(), blocked], vec![m.emit.clone()]).unwrap();
        let mut vs = VersionSpace::new(&class, 10, 0.1);
        let data = EpochData {
            tuples: vec![Transition { state: 0, action: 0, obs: 0, next_state: 1 }],
        };
        vs.update(&class, &data);
        assert_eq!(vs.loglik_t[1], f64::NEG_INFINITY);
        assert_eq!(vs.surviving_t, vec![0]);
    }

    #[test]
    fn singleton_class_selects_true_optimum() {
        let m = truth();
        let class = ModelClass::new(vec![m.trans.clone()], vec![m.emit.clone()]).unwrap();
        let view = m.learner_view();
        let vs = VersionSpace::new(&class, 10, 0.1);
        let sel = optimistic_select(&vs, &class, &view, Budget::default(), DEFAULT_MAX_PAIRS).unwrap();
        let opt = pop_plan(&m.pomdp(), Budget::default()).unwrap().value;
        assert!((sel.value - opt).abs() < 1e-12);
        let env = Environment::new(m).unwrap();
        let log = run_hopv(&env, &RunConfig::new(20, 0.1), class, &RngStream::new(2)).unwrap();
        assert_eq!(log.len(), 10);
        assert!(log.rows.iter().all(|r| r.regret_step.abs() < 1e-12));
    }

    #[test]
    fn loglik_term_counts() {
        let m = truth();
        let class = ModelClass::new(vec![m.trans.clone(), TransitionTable::uniform(2, 2)], vec![m.emit.clone()]).unwrap();
        let env = Environment::new(m.clone()).unwrap();
        let mut s = HopvState::new(m.learner_view(), class, 5, 0.1, Budget::default()).unwrap();
        let rng = RngStream::new(9);
        for k in 1..=5 {
            let out = s.run_epoch(&env, &rng).unwrap();
            assert_eq!(out.data.tuples.len(), 2);
            assert_eq!(s.vs.terms, 2 * k);
        }
    }

    #[test]
    fn k_equal_h_is_one_epoch_and_small_k_rejected() {
        let m = truth();
        let class = ModelClass::new(vec![m.trans.clone()], vec![m.emit.clone()]).unwrap();
        let env = Environment::new(m).unwrap();
        let log = run_hopv(&env, &RunConfig::new(2, 0.1), class.clone(), &RngStream::new(0)).unwrap();
        assert_eq!(log.len(), 1);
        assert!(run_hopv(&env, &RunConfig::new(1, 0.1), class, &RngStream::new(0)).is_err());
    }

    #[test]
    fn pair_guard() {
        let m = truth();
        let class = ModelClass::new(vec![m.trans.clone(); 3], vec![m.emit.clone(); 3]).unwrap();
        let vs = VersionSpace::new(&class, 10, 0.1);
        let err = optimistic_select(&vs, &class, &m.learner_view(), Budget::default(), 8).unwrap_err();
        assert!(matches!(err, HomdpError::BudgetExceeded { required: 9, budget: 8 }));
    }

    #[test]
    fn malformed_class_rejected() {
        let bad = TransitionTable::new(2, 1, vec![0.5, 0.6, 0.5, 0.5]).unwrap();
        assert!(matches!(
            ModelClass::new(vec![bad], vec![EmissionTable::uniform(2, 2)]),
            Err(HomdpError::InvalidModel(_))
        ));
        assert!(matches!(ModelClass::new(vec![], vec![]), Err(HomdpError::EmptyClass(_))));
    }
}
