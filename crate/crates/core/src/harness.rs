//! Experiment harness: baselines, PAC readout, scaling runs and sweeps.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{HomdpError, Result};
use crate::hard::{build_hard_instance, HardInstanceSpec};
use crate::hopb::{run_hopb, run_hopb_mle, InitScheme};
use crate::hopv::{run_hopv, ModelClass};
use crate::io::{load_classes, load_model};
use crate::model::{EmissionTable, Environment, HomdpModel, TransitionTable};
use crate::planner::{eval_policy_enum, pop_plan, Budget};
use crate::policy::{HistoryPolicy, TablePolicy, UniformPolicy};
use crate::rng::RngStream;
use crate::runlog::{run_fingerprint, Algorithm, RunConfig, RunLog, RunRow};

pub fn baseline_random(_env: &Environment) -> UniformPolicy {
    UniformPolicy
}

/// Optimal policy of the true model.
pub fn baseline_optimal(env: &Environment, budget: Budget) -> Result<TablePolicy> {
    Ok(pop_plan(&env.hidden_model().pomdp(), budget)?.policy)
}

/// Log of a fixed policy deployed for `K` episodes. Values are exact, so
/// every row is identical apart from `k` and the wallclock.
pub fn run_fixed_policy(
    env: &Environment,
    algorithm: Algorithm,
    policy: &(impl HistoryPolicy + ?Sized),
    cfg: &RunConfig,
    seed: u64,
) -> Result<RunLog> {
    cfg.validate()?;
    let truth = env.hidden_model();
    let fp = run_fingerprint(algorithm, truth, json!({"K": cfg.episodes}), seed);
    let start = Instant::now();
    let v_opt = pop_plan(&truth.pomdp(), cfg.budget)?.value;
    let v = eval_policy_enum(&truth.pomdp(), policy, cfg.budget)?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    let mut log = RunLog::new(algorithm, fp);
    for k in 1..=cfg.episodes {
        log.push(RunRow {
            k,
            value_opt: v_opt,
            value_hat: v,
            optimistic_value: v,
            regret_step: v_opt - v,
            regret_cum: 0.0,
            max_bonus_x: None,
            max_bonus_xa: None,
            surviving_t: None,
            surviving_o: None,
            wallclock_ms: if k == 1 { ms } else { 0.0 },
        });
    }
    Ok(log)
}

/// First `k` whose uniform mixture of the first `k` selected policies is
/// `eps`-optimal, i.e. `Reg(k) / k <= eps`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PacHit {
    pub k_hit: usize,
    /// `<fingerprint>:mix1-<k>` names the mixture policy.
    pub policy_id: String,
}

pub fn pac_readout(log: &RunLog, eps: f64) -> Option<PacHit> {
    log.rows
        .iter()
        .find(|r| r.regret_cum / r.k as f64 <= eps)
        .map(|r| PacHit { k_hit: r.k, policy_id: format!("{}:mix1-{}", log.fingerprint, r.k) })
}

/// One row of a scaling table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingRow {
    pub x: usize,
    pub y: usize,
    pub xy: usize,
    /// Per seed; `None` when the readout never fired within `k_max`.
    pub k_to_eps: Vec<Option<usize>>,
    /// Median with censored seeds counted as `k_max + 1`.
    pub median_k: f64,
    pub censored: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
    /// Medians non-decreasing when rows are ordered by `X * Y`.
    pub monotone: bool,
    pub eps: f64,
    pub k_max: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// How the sign vector `u` of each hard instance is chosen per seed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignDraw {
    /// Every seed runs on the instance exactly as given.
    #[default]
    Fixed,
    /// Every seed redraws `u` uniformly from its own stream, so the median
    /// is taken over instances as well as learner randomness.
    PerSeed,
}

/// Stream index used to redraw `u` under [`SignDraw::PerSeed`]; disjoint
/// from the per-episode indices for any realistic `K`.
const SIGN_STREAM: u64 = 1 << 40;

/// Runs `algorithm` for `k_max` episodes per (instance, seed) and reads off
/// the first `k` with `Reg(k)/k <= eps`.
pub fn scaling_experiment(
    family: &[HardInstanceSpec],
    algorithm: Algorithm,
    eps: f64,
    seeds: &[u64],
    k_max: usize,
    delta: f64,
) -> Result<ScalingTable> {
    scaling_experiment_with(family, algorithm, eps, seeds, k_max, delta, SignDraw::Fixed)
}

pub fn scaling_experiment_with(
    family: &[HardInstanceSpec],
    algorithm: Algorithm,
    eps: f64,
    seeds: &[u64],
    k_max: usize,
    delta: f64,
    draw: SignDraw,
) -> Result<ScalingTable> {
    if seeds.is_empty() {
        return Err(HomdpError::InvalidArgument("empty seed list".into()));
    }
    let cfg = RunConfig::new(k_max, delta);
    let mut rows = Vec::with_capacity(family.len());
    for spec in family {
        spec.validate()?;
        let fixed = Environment::new(build_hard_instance(spec)?)?;
        let hits = seeds
            .par_iter()
            .map(|&seed| {
                let log = match draw {
                    SignDraw::Fixed => run_algorithm(&fixed, algorithm, &cfg, &AlgorithmInputs::default(), seed)?,
                    SignDraw::PerSeed => {
                        let mut rng = RngStream::new(seed).derive(SIGN_STREAM);
                        let drawn = HardInstanceSpec::random(spec.x, spec.y, spec.epsilon, &mut rng)?;
                        let env = Environment::new(build_hard_instance(&drawn)?)?;
                        run_algorithm(&env, algorithm, &cfg, &AlgorithmInputs::default(), seed)?
                    }
                };
                Ok(pac_readout(&log, eps).map(|h| h.k_hit))
            })
            .collect::<Result<Vec<_>>>()?;
        let censored = hits.iter().filter(|h| h.is_none()).count();
        let median_k = median(hits.iter().map(|h| h.unwrap_or(k_max + 1) as f64).collect());
        rows.push(ScalingRow { x: spec.x, y: spec.y, xy: spec.x * spec.y, k_to_eps: hits, median_k, censored });
    }
    let mut order: Vec<&ScalingRow> = rows.iter().collect();
    order.sort_by_key(|r| r.xy);
    let monotone = order.windows(2).all(|w| w[0].median_k <= w[1].median_k);
    Ok(ScalingTable { rows, monotone, eps, k_max })
}

/// Extra inputs some algorithms need.
#[derive(Clone, Debug, Default)]
pub struct AlgorithmInputs {
    pub emission_class: Option<Vec<EmissionTable>>,
    pub model_class: Option<ModelClass>,
}

/// Dispatches one run. The learner's randomness comes from `seed`.
pub fn run_algorithm(
    env: &Environment,
    algorithm: Algorithm,
    cfg: &RunConfig,
    inputs: &AlgorithmInputs,
    seed: u64,
) -> Result<RunLog> {
    let rng = RngStream::new(seed);
    match algorithm {
        Algorithm::Hopb => run_hopb(env, cfg, InitScheme::Uniform, &rng),
        Algorithm::HopbMle => {
            let class = inputs
                .emission_class
                .clone()
                .ok_or_else(|| HomdpError::InvalidArgument("hopb-mle needs an emission class".into()))?;
            run_hopb_mle(env, cfg, class, &rng)
        }
        Algorithm::Hopv => {
            let class = inputs
                .model_class
                .clone()
                .ok_or_else(|| HomdpError::InvalidArgument("hopv needs a model class".into()))?;
            run_hopv(env, cfg, class, &rng)
        }
        Algorithm::Random => run_fixed_policy(env, algorithm, &baseline_random(env), cfg, seed),
        Algorithm::Optimal => {
            let pi = baseline_optimal(env, cfg.budget)?;
            run_fixed_policy(env, algorithm, &pi, cfg, seed)
        }
    }
}

/// Where a sweep gets a model from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    /// Path to a model file, relative to the config file.
    File(PathBuf),
    /// Hard instance; `seed` draws the sign vector `u` (all `+1` if absent).
    Hard {
        #[serde(rename = "X")]
        x: usize,
        #[serde(rename = "Y")]
        y: usize,
        eps: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSpec {
    pub name: Algorithm,
    /// `hopb-mle`: file with `{"emissions": [...]}`.
    #[serde(default)]
    pub emission_class: Option<PathBuf>,
    /// `hopv`: file with `{"transitions": [...], "emissions": [...]}`.
    #[serde(default)]
    pub classes: Option<PathBuf>,
}

/// Sweep description, read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub models: Vec<ModelSource>,
    pub algorithms: Vec<AlgorithmSpec>,
    #[serde(rename = "K")]
    pub k: usize,
    pub delta: f64,
    pub seeds: Vec<u64>,
    /// Output directory, relative to the config file.
    pub output: PathBuf,
    /// Optional PAC target reported in the summary.
    #[serde(default)]
    pub pac_eps: Option<f64>,
    #[serde(default)]
    pub budget: Option<u128>,
}

impl SweepConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let cfg: SweepConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate(&base)?;
        Ok((cfg, base))
    }

    pub fn validate(&self, base: &Path) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(HomdpError::InvalidArgument("sweep needs at least one seed".into()));
        }
        if self.models.is_empty() || self.algorithms.is_empty() {
            return Err(HomdpError::InvalidArgument("sweep needs models and algorithms".into()));
        }
        let mut files: Vec<&PathBuf> = Vec::new();
        for m in &self.models {
            if let ModelSource::File(p) = m {
                files.push(p);
            }
        }
        for a in &self.algorithms {
            files.extend(a.emission_class.iter());
            files.extend(a.classes.iter());
            match a.name {
                Algorithm::HopbMle if a.emission_class.is_none() => {
                    return Err(HomdpError::InvalidArgument("hopb-mle entry needs emission_class".into()));
                }
                Algorithm::Hopv if a.classes.is_none() => {
                    return Err(HomdpError::InvalidArgument("hopv entry needs classes".into()));
                }
                _ => {}
            }
        }
        for f in files {
            let p = base.join(f);
            if !p.exists() {
                return Err(HomdpError::InvalidArgument(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

fn load_source(src: &ModelSource, base: &Path) -> Result<(String, HomdpModel)> {
    match src {
        ModelSource::File(p) => Ok((p.display().to_string(), load_model(base.join(p))?)),
        ModelSource::Hard { x, y, eps, seed } => {
            let spec = match seed {
                Some(s) => HardInstanceSpec::random(*x, *y, *eps, &mut RngStream::new(*s))?,
                None => HardInstanceSpec::new(*x, *y, *eps)?,
            };
            Ok((format!("hard-X{x}-Y{y}-eps{eps}"), build_hard_instance(&spec)?))
        }
    }
}

fn load_inputs(spec: &AlgorithmSpec, base: &Path) -> Result<AlgorithmInputs> {
    let mut inputs = AlgorithmInputs::default();
    if let Some(p) = &spec.emission_class {
        inputs.emission_class = Some(load_classes(base.join(p))?.1);
    }
    if let Some(p) = &spec.classes {
        let (t, o): (Vec<TransitionTable>, Vec<EmissionTable>) = load_classes(base.join(p))?;
        inputs.model_class = Some(ModelClass::new(t, o)?);
    }
    Ok(inputs)
}

/// One finished run in a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRun {
    pub model: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub log: RunLog,
}

/// Runs every (model, algorithm, seed) combination in parallel and writes
/// `runs/<fingerprint>.csv`, merged `episodes.csv` / `epochs.csv` (rows
/// grouped by sorted fingerprint) and `summary.csv` under the output dir.
pub fn run_sweep(cfg: &SweepConfig, base: &Path) -> Result<Vec<SweepRun>> {
    cfg.validate(base)?;
    let models = cfg.models.iter().map(|m| load_source(m, base)).collect::<Result<Vec<_>>>()?;
    let inputs = cfg.algorithms.iter().map(|a| load_inputs(a, base)).collect::<Result<Vec<_>>>()?;
    let mut run_cfg = RunConfig::new(cfg.k, cfg.delta);
    if let Some(b) = cfg.budget {
        run_cfg.budget = Budget(b);
    }
    let mut jobs = Vec::new();
    for (mi, _) in models.iter().enumerate() {
        for (ai, _) in cfg.algorithms.iter().enumerate() {
            for &seed in &cfg.seeds {
                jobs.push((mi, ai, seed));
            }
        }
    }
    let envs = models
        .iter()
        .map(|(_, m)| Environment::new(m.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut runs = jobs
        .par_iter()
        .map(|&(mi, ai, seed)| {
            let algorithm = cfg.algorithms[ai].name;
            let log = run_algorithm(&envs[mi], algorithm, &run_cfg, &inputs[ai], seed)?;
            Ok(SweepRun { model: models[mi].0.clone(), algorithm, seed, log })
        })
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by(|a, b| a.log.fingerprint.cmp(&b.log.fingerprint));

    let out = base.join(&cfg.output);
    let run_dir = out.join("runs");
    fs::create_dir_all(&run_dir)?;
    for r in &runs {
        r.log.save_csv(run_dir.join(format!("{}.csv", r.log.fingerprint)), true)?;
    }
    for (name, epochal) in [("episodes.csv", false), ("epochs.csv", true)] {
        let group: Vec<&SweepRun> = runs.iter().filter(|r| r.algorithm.is_epochal() == epochal).collect();
        if group.is_empty() {
            continue;
        }
        let mut text = String::new();
        for (i, r) in group.iter().enumerate() {
            let csv = r.log.to_csv_string(true);
            let body = if i == 0 { csv.as_str() } else { csv.split_once('\n').map_or("", |(_, b)| b) };
            text.push_str(body);
        }
        fs::write(out.join(name), text)?;
    }
    write_summary(&out.join("summary.csv"), &runs, cfg.pac_eps)?;
    Ok(runs)
}

fn write_summary(path: &Path, runs: &[SweepRun], pac_eps: Option<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HomdpError::Io(std::io::Error::other(e)))?;
    let header = [
        "fingerprint", "model", "algorithm", "seed", "rows", "value_opt", "final_value_hat", "regret_cum",
        "avg_regret", "pac_eps", "k_hit", "warnings",
    ];
    w.write_record(header).map_err(|e| HomdpError::Io(std::io::Error::other(e)))?;
    for r in runs {
        let last = r.log.rows.last();
        let k_hit = pac_eps.and_then(|e| pac_readout(&r.log, e)).map(|h| h.k_hit.to_string());
        let rec = [
            r.log.fingerprint.clone(),
            r.model.clone(),
            r.algorithm.name().to_string(),
            r.seed.to_string(),
            r.log.len().to_string(),
            last.map_or(String::new(), |l| l.value_opt.to_string()),
            last.map_or(String::new(), |l| l.value_hat.to_string()),
            r.log.regret_cum().to_string(),
            last.map_or(String::new(), |l| (l.regret_cum / l.k as f64).to_string()),
            pac_eps.map_or(String::new(), |e| e.to_string()),
            k_hit.unwrap_or_default(),
            r.log.warnings.join("; "),
        ];
        w.write_record(&rec).map_err(|e| HomdpError::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}
