//! Optimism with count-based bonuses.
//!
//! Each episode plans on the empirical model with the reward inflated by
//! uncertainty bonuses on latent states and latent state-action pairs,
//! deploys the plan, then folds the revealed latent trajectory into the
//! counts. A variant swaps the tabular emission estimate for maximum
//! likelihood over a finite emission class.

use std::time::Instant;

use serde_json::json;

use crate::error::{HomdpError, Result};
use crate::model::{EmissionTable, Environment, LearnerView, RewardTable, TransitionTable};
use crate::planner::{eval_policy_enum, pop_plan, Budget, PlanResult};
use crate::rng::RngStream;
use crate::runlog::{run_fingerprint, Algorithm, RunConfig, RunLog, RunRow};
use crate::sim::EpisodeRecord;

/// Tolerance for deciding that the true emission table is a class member.
const REALIZABILITY_TOL: f64 = 1e-9;

/// Bonus shapes. Both variants use
/// `eps(x,a) = min(sqrt(beta_trans / n), cap_trans)` and
/// `eps(x) = min(sqrt(beta_obs / n), cap_obs)`, with `n = 0` giving the cap,
/// and inflate the reward by `weight_trans * eps(x,a) + weight_obs * eps(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BonusParams {
    pub beta_trans: f64,
    pub beta_obs: f64,
    pub cap_trans: f64,
    pub cap_obs: f64,
    pub weight_trans: f64,
    pub weight_obs: f64,
    pub delta: f64,
    pub episodes: usize,
}

impl BonusParams {
    /// Tabular bonuses: `beta1 = 4 H^3 ln(YXAHK/delta)`,
    /// `beta2 = 8 Y ln(YXKH/delta)`, caps `2H` and `2`,
    /// `r_hat = r + H eps(x) + eps(x,a)`.
    pub fn tabular(x: usize, y: usize, a: usize, h: usize, k: usize, delta: f64) -> Self {
        let (xf, yf, af, hf, kf) = (x as f64, y as f64, a as f64, h as f64, k as f64);
        BonusParams {
            beta_trans: 4.0 * hf.powi(3) * (yf * xf * af * hf * kf / delta).ln(),
            beta_obs: 8.0 * yf * (yf * xf * kf * hf / delta).ln(),
            cap_trans: 2.0 * hf,
            cap_obs: 2.0,
            weight_trans: 1.0,
            weight_obs: hf,
            delta,
            episodes: k,
        }
    }

    /// Emission-class bonuses: `eps(x,a) = min(2, sqrt(8 X ln(X^2 A K H/delta)/n))`,
    /// `eps(x) = min(2, sqrt(8 ln(|Theta| X K/delta)/n))`,
    /// `r_hat = r + 3H eps(x,a) + H eps(x)`.
    pub fn mle(x: usize, a: usize, h: usize, k: usize, delta: f64, class_size: usize) -> Self {
        let (xf, af, hf, kf) = (x as f64, a as f64, h as f64, k as f64);
        BonusParams {
            beta_trans: 8.0 * xf * (xf * xf * af * kf * hf / delta).ln(),
            beta_obs: 8.0 * (class_size as f64 * xf * kf / delta).ln(),
            cap_trans: 2.0,
            cap_obs: 2.0,
            weight_trans: 3.0 * hf,
            weight_obs: hf,
            delta,
            episodes: k,
        }
    }

    pub fn bonus_trans(&self, n: u64) -> f64 {
        capped_bonus(self.beta_trans, n, self.cap_trans)
    }

    pub fn bonus_obs(&self, n: u64) -> f64 {
        capped_bonus(self.beta_obs, n, self.cap_obs)
    }
}

fn capped_bonus(beta: f64, n: u64, cap: f64) -> f64 {
    if n == 0 {
        cap
    } else {
        (beta / n as f64).sqrt().min(cap)
    }
}

/// Visit counts from revealed latent trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct CountTables {
    num_states: usize,
    num_obs: usize,
    num_actions: usize,
    /// `n(x)`, steps `h = 1..=H`.
    pub n_x: Vec<u64>,
    /// `n(x, a)` at `x * A + a`.
    pub n_xa: Vec<u64>,
    /// `(x, a, x')` at `(x * A + a) * X + x'`.
    pub trans_counts: Vec<u64>,
    /// `(x, y)` at `x * Y + y`.
    pub emit_counts: Vec<u64>,
}

impl CountTables {
    pub fn new(num_states: usize, num_obs: usize, num_actions: usize) -> Self {
        CountTables {
            num_states,
            num_obs,
            num_actions,
            n_x: vec![0; num_states],
            n_xa: vec![0; num_states * num_actions],
            trans_counts: vec![0; num_states * num_actions * num_states],
            emit_counts: vec![0; num_states * num_obs],
        }
    }

    /// Adds the `H` emission pairs `(x_h, y_h)` and `H` transition triples
    /// `(x_h, a_h, x_{h+1})` of one episode.
    pub fn ingest(&mut self, rec: &EpisodeRecord) -> Result<()> {
        let horizon = rec.observed.obs.len();
        if rec.latent.len() != horizon + 1 || rec.observed.acts.len() != horizon {
            return Err(HomdpError::MalformedHistory(format!(
                "episode has {} latent states for {} steps",
                rec.latent.len(),
                horizon
            )));
        }
        let (nx, ny, na) = (self.num_states, self.num_obs, self.num_actions);
        for h in 0..horizon {
            let (x, y, a, xn) = (rec.latent[h], rec.observed.obs[h], rec.observed.acts[h], rec.latent[h + 1]);
            if x >= nx || xn >= nx || y >= ny || a >= na {
                return Err(HomdpError::MalformedHistory(format!("ids out of range at step {}", h + 1)));
            }
            self.n_x[x] += 1;
            self.n_xa[x * na + a] += 1;
            self.trans_counts[(x * na + a) * nx + xn] += 1;
            self.emit_counts[x * ny + y] += 1;
        }
        Ok(())
    }

    pub fn n_x(&self, x: usize) -> u64 {
        self.n_x[x]
    }

    pub fn n_xa(&self, x: usize, a: usize) -> u64 {
        self.n_xa[x * self.num_actions + a]
    }

    pub fn trans_count(&self, x: usize, a: usize, next: usize) -> u64 {
        self.trans_counts[(x * self.num_actions + a) * self.num_states + next]
    }

    pub fn emit_count(&self, x: usize, y: usize) -> u64 {
        self.emit_counts[x * self.num_obs + y]
    }

    /// Empirical transition rows; unvisited `(x, a)` rows come from `prior`.
    pub fn empirical_trans(&self, prior: &TransitionTable) -> TransitionTable {
        let mut t = prior.clone();
        for x in 0..self.num_states {
            for a in 0..self.num_actions {
                let n = self.n_xa(x, a);
                if n > 0 {
                    for (xn, p) in t.row_mut(x, a).iter_mut().enumerate() {
                        *p = self.trans_count(x, a, xn) as f64 / n as f64;
                    }
                }
            }
        }
        t
    }

    /// Empirical emission rows; unvisited `x` rows come from `prior`.
    pub fn empirical_emit(&self, prior: &EmissionTable) -> EmissionTable {
        let mut o = prior.clone();
        for x in 0..self.num_states {
            let n = self.n_x(x);
            if n > 0 {
                for (y, p) in o.row_mut(x).iter_mut().enumerate() {
                    *p = self.emit_count(x, y) as f64 / n as f64;
                }
            }
        }
        o
    }

    /// `sum_{x,y} n(x,y) ln O(y|x)`; zero-count cells contribute nothing.
    pub fn emission_loglik(&self, emit: &EmissionTable) -> f64 {
        let mut ll = 0.0;
        for x in 0..self.num_states {
            for y in 0..self.num_obs {
                let n = self.emit_count(x, y);
                if n > 0 {
                    ll += n as f64 * emit.get(x, y).ln();
                }
            }
        }
        ll
    }
}

/// Starting guess for `T_hat_1`, `O_hat_1`. Also fills rows never visited.
#[derive(Clone, Debug, Default)]
pub enum InitScheme {
    #[default]
    Uniform,
    Provided(TransitionTable, EmissionTable),
}

/// How `O_hat` is estimated.
#[derive(Clone, Debug)]
pub enum EmissionEstimator {
    Tabular,
    /// Maximum likelihood over a finite class, ties to the lowest index.
    Mle { class: Vec<EmissionTable>, selected: usize },
}

/// Learner state between episodes.
#[derive(Clone, Debug)]
pub struct HopbState {
    view: LearnerView,
    pub counts: CountTables,
    pub t_hat: TransitionTable,
    pub o_hat: EmissionTable,
    pub params: BonusParams,
    pub estimator: EmissionEstimator,
    prior_t: TransitionTable,
    prior_o: EmissionTable,
    /// Episodes ingested so far.
    pub k: usize,
    pub budget: Budget,
}

/// One HOP-B episode's diagnostics.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub record: EpisodeRecord,
    pub plan: PlanResult,
    pub max_bonus_x: f64,
    pub max_bonus_xa: f64,
}

impl HopbState {
    pub fn new(view: LearnerView, params: BonusParams, init: InitScheme, budget: Budget) -> Result<Self> {
        let (nx, ny, na) = (view.num_states, view.num_obs, view.num_actions);
        let (prior_t, prior_o) = match init {
            InitScheme::Uniform => (TransitionTable::uniform(nx, na), EmissionTable::uniform(nx, ny)),
            InitScheme::Provided(t, o) => {
                if t.num_states() != nx || t.num_actions() != na || o.num_states() != nx || o.num_obs() != ny {
                    return Err(HomdpError::DimensionMismatch("initial model shape".into()));
                }
                (t, o)
            }
        };
        Ok(HopbState {
            counts: CountTables::new(nx, ny, na),
            t_hat: prior_t.clone(),
            o_hat: prior_o.clone(),
            view,
            params,
            estimator: EmissionEstimator::Tabular,
            prior_t,
            prior_o,
            k: 0,
            budget,
        })
    }

    /// Same, but `O_hat` is the maximum-likelihood member of `class`; before
    /// any data that is `class[0]`.
    pub fn new_mle(
        view: LearnerView,
        params: BonusParams,
        class: Vec<EmissionTable>,
        budget: Budget,
    ) -> Result<Self> {
        if class.is_empty() {
            return Err(HomdpError::EmptyClass("emission"));
        }
        for o in &class {
            if o.num_states() != view.num_states || o.num_obs() != view.num_obs {
                return Err(HomdpError::DimensionMismatch("emission class member shape".into()));
            }
        }
        let mut s = Self::new(view, params, InitScheme::Uniform, budget)?;
        s.o_hat = class[0].clone();
        s.estimator = EmissionEstimator::Mle { class, selected: 0 };
        Ok(s)
    }

    pub fn view(&self) -> &LearnerView {
        &self.view
    }

    pub fn bonus_latent(&self, x: usize) -> f64 {
        self.params.bonus_obs(self.counts.n_x(x))
    }

    pub fn bonus_trans(&self, x: usize, a: usize) -> f64 {
        self.params.bonus_trans(self.counts.n_xa(x, a))
    }

    pub fn optimistic_reward(&self) -> RewardTable {
        let p = &self.params;
        RewardTable::from_fn(self.view.num_states, self.view.num_actions, |x, a| {
            self.view.reward.get(x, a)
                + p.weight_obs * self.bonus_latent(x)
                + p.weight_trans * self.bonus_trans(x, a)
        })
    }

    /// Optimal plan on `(T_hat, O_hat, r_hat)`.
    pub fn plan(&self) -> Result<PlanResult> {
        let r_hat = self.optimistic_reward();
        pop_plan(&self.view.pomdp(&self.t_hat, &self.o_hat, &r_hat), self.budget)
    }

    /// Folds one revealed episode into the counts and refreshes the models.
    pub fn ingest(&mut self, rec: &EpisodeRecord) -> Result<()> {
        self.counts.ingest(rec)?;
        self.k += 1;
        self.t_hat = self.counts.empirical_trans(&self.prior_t);
        match &mut self.estimator {
            EmissionEstimator::Tabular => {
                self.o_hat = self.counts.empirical_emit(&self.prior_o);
            }
            EmissionEstimator::Mle { class, selected } => {
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0;
                for (i, o) in class.iter().enumerate() {
                    let ll = self.counts.emission_loglik(o);
                    if ll > best {
                        best = ll;
                        arg = i;
                    }
                }
                *selected = arg;
                self.o_hat = class[arg].clone();
            }
        }
        Ok(())
    }

    /// Plan, deploy on `env`, ingest the hindsight reveal.
    pub fn step(&mut self, env: &Environment, rng: &mut RngStream) -> Result<StepOutcome> {
        let plan = self.plan()?;
        let (nx, na) = (self.view.num_states, self.view.num_actions);
        let max_bonus_x = (0..nx).map(|x| self.bonus_latent(x)).fold(0.0, f64::max);
        let max_bonus_xa = (0..nx)
            .flat_map(|x| (0..na).map(move |a| (x, a)))
            .map(|(x, a)| self.bonus_trans(x, a))
            .fold(0.0, f64::max);
        let record = env.run_episode(&plan.policy, rng)?;
        self.ingest(&record)?;
        Ok(StepOutcome { record, plan, max_bonus_x, max_bonus_xa })
    }
}

fn run_loop(
    env: &Environment,
    mut state: HopbState,
    cfg: &RunConfig,
    rng: &RngStream,
    mut log: RunLog,
) -> Result<RunLog> {
    let truth = env.hidden_model();
    let v_opt = pop_plan(&truth.pomdp(), cfg.budget)?.value;
    for k in 1..=cfg.episodes {
        let start = Instant::now();
        let out = state.step(env, &mut rng.derive(k as u64))?;
        let value_hat = eval_policy_enum(&truth.pomdp(), &out.plan.policy, cfg.budget)?;
        log.push(RunRow {
            k,
            value_opt: v_opt,
            value_hat,
            optimistic_value: out.plan.value,
            regret_step: v_opt - value_hat,
            regret_cum: 0.0,
            max_bonus_x: Some(out.max_bonus_x),
            max_bonus_xa: Some(out.max_bonus_xa),
            surviving_t: None,
            surviving_o: None,
            wallclock_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(log)
}

/// Runs `K` episodes of tabular HOP-B. Episode `k` draws from `rng.derive(k)`.
/// Values in the log are exact, computed on the true model.
pub fn run_hopb(env: &Environment, cfg: &RunConfig, init: InitScheme, rng: &RngStream) -> Result<RunLog> {
    cfg.validate()?;
    let v = env.view();
    let params = BonusParams::tabular(v.num_states, v.num_obs, v.num_actions, v.horizon, cfg.episodes, cfg.delta);
    let init_tag = match &init {
        InitScheme::Uniform => json!("uniform"),
        InitScheme::Provided(t, o) => json!({"trans": t.to_nested(), "emit": o.to_nested()}),
    };
    let fp = run_fingerprint(
        Algorithm::Hopb,
        env.hidden_model(),
        json!({"K": cfg.episodes, "delta": cfg.delta, "init": init_tag}),
        rng.seed(),
    );
    let state = HopbState::new(v.clone(), params, init, cfg.budget)?;
    run_loop(env, state, cfg, rng, RunLog::new(Algorithm::Hopb, fp))
}

/// HOP-B with maximum-likelihood emissions over `class`. A class that does
/// not contain the true emission table still runs, with a warning in the log.
pub fn run_hopb_mle(
    env: &Environment,
    cfg: &RunConfig,
    class: Vec<EmissionTable>,
    rng: &RngStream,
) -> Result<RunLog> {
    cfg.validate()?;
    if class.is_empty() {
        return Err(HomdpError::EmptyClass("emission"));
    }
    let v = env.view();
    let params = BonusParams::mle(v.num_states, v.num_actions, v.horizon, cfg.episodes, cfg.delta, class.len());
    let fp = run_fingerprint(
        Algorithm::HopbMle,
        env.hidden_model(),
        json!({
            "K": cfg.episodes,
            "delta": cfg.delta,
            "class": class.iter().map(EmissionTable::to_nested).collect::<Vec<_>>(),
        }),
        rng.seed(),
    );
    let mut log = RunLog::new(Algorithm::HopbMle, fp);
    if !class.iter().any(|o| tables_close(o, &env.hidden_model().emit)) {
        log.warnings.push("emission class does not contain the true emission table".into());
    }
    let state = HopbState::new_mle(v.clone(), params, class, cfg.budget)?;
    run_loop(env, state, cfg, rng, log)
}

fn tables_close(a: &EmissionTable, b: &EmissionTable) -> bool {
    a.num_states() == b.num_states()
        && a.num_obs() == b.num_obs()
        && (0..a.num_states()).all(|x| {
            a.row(x).iter().zip(b.row(x)).all(|(p, q)| (p - q).abs() <= REALIZABILITY_TOL)
        })
}
