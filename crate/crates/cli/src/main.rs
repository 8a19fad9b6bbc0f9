use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use homdp_core::hard::{build_packing, default_min_l1, round_down_dims, HardSidecar, HardInstanceSpec};
use homdp_core::harness::{run_sweep, SweepConfig};
use homdp_core::hopv::ModelClass;
use homdp_core::io::{load_classes, load_model, load_policy, load_reward, save_model, PolicyFile};
use homdp_core::{
    build_hard_instance, eval_policy_enum, pop_plan, run_hopb, run_hopb_mle, run_hopv, Budget, Environment,
    HomdpError, InitScheme, Pomdp, RngStream, RunConfig, RunLog,
};

#[derive(Parser)]
#[command(name = "homdp", version, about = "Planning and learning in hindsight observable MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact optimal history policy for a model.
    Plan {
        #[arg(long)]
        model: PathBuf,
        /// `{"reward": [[..]]}` used in place of the model's reward.
        #[arg(long)]
        reward_override: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        budget: Option<u128>,
    },
    /// Exact value of a stored policy.
    EvalPolicy {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        budget: Option<u128>,
    },
    /// HOP-B. With `--emission-class`, the MLE emission variant.
    RunHopb {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "K")]
        k: usize,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        emission_class: Option<PathBuf>,
        #[arg(long)]
        budget: Option<u128>,
    },
    /// HOP-V over a finite model class.
    RunHopv {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        classes: PathBuf,
        #[arg(long = "K")]
        k: usize,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        budget: Option<u128>,
    },
    /// Lower-bound instance. Writes the model and `<out>.sidecar.json`.
    MakeHard {
        #[arg(long = "X")]
        x: usize,
        #[arg(long = "Y")]
        y: usize,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also search for a packing of this many sign vectors.
        #[arg(long)]
        packing: Option<usize>,
    },
    /// Batch of runs described by a JSON config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
}

fn budget(b: Option<u128>) -> Budget {
    b.map(Budget).unwrap_or_default()
}

fn run_config(k: usize, delta: f64, b: Option<u128>) -> RunConfig {
    let mut cfg = RunConfig::new(k, delta);
    cfg.budget = budget(b);
    cfg
}

fn finish_run(log: &RunLog, out: &Path) -> Result<()> {
    for w in &log.warnings {
        eprintln!("warning: {w}");
    }
    log.save_csv(out, true)?;
    println!("{} rows, regret_cum {}, fingerprint {}", log.len(), log.regret_cum(), log.fingerprint);
    Ok(())
}

fn sidecar_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.sidecar.json"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Plan { model, reward_override, out, budget: b } => {
            let m = load_model(&model)?;
            let reward = match reward_override {
                Some(p) => {
                    let r = load_reward(&p)?;
                    if r.num_states() != m.num_states() || r.num_actions() != m.num_actions() {
                        return Err(HomdpError::DimensionMismatch(format!(
                            "reward override is {}x{}, model is {}x{}",
                            r.num_states(),
                            r.num_actions(),
                            m.num_states(),
                            m.num_actions()
                        ))
                        .into());
                    }
                    r
                }
                None => m.reward.clone(),
            };
            let pomdp = Pomdp { rho: &m.rho, trans: &m.trans, emit: &m.emit, reward: &reward, horizon: m.horizon };
            let plan = pop_plan(&pomdp, budget(b))?;
            let file = PolicyFile::from_policy(&plan.policy, m.num_obs(), m.num_actions(), m.horizon, Some(plan.value));
            std::fs::write(&out, serde_json::to_string_pretty(&file)?)
                .with_context(|| format!("writing {}", out.display()))?;
            println!("{}", plan.value);
        }
        Command::EvalPolicy { model, policy, budget: b } => {
            let m = load_model(&model)?;
            let p = load_policy(&policy)?;
            println!("{}", eval_policy_enum(&m.pomdp(), &p, budget(b))?);
        }
        Command::RunHopb { model, k, delta, seed, out, emission_class, budget: b } => {
            let env = Environment::new(load_model(&model)?)?;
            let cfg = run_config(k, delta, b);
            let rng = RngStream::new(seed);
            let log = match emission_class {
                Some(p) => run_hopb_mle(&env, &cfg, load_classes(&p)?.1, &rng)?,
                None => run_hopb(&env, &cfg, InitScheme::Uniform, &rng)?,
            };
            finish_run(&log, &out)?;
        }
        Command::RunHopv { model, classes, k, delta, seed, out, budget: b } => {
            let env = Environment::new(load_model(&model)?)?;
            let (t, o) = load_classes(&classes)?;
            let log = run_hopv(&env, &run_config(k, delta, b), ModelClass::new(t, o)?, &RngStream::new(seed))?;
            finish_run(&log, &out)?;
        }
        Command::MakeHard { x, y, eps, seed, out, packing } => {
            let dims = round_down_dims(x, y)?;
            if dims.adjusted {
                eprintln!("note: rounded X={x}, Y={y} down to X={}, Y={}", dims.x, dims.y);
            }
            let mut rng = RngStream::new(seed);
            let spec = HardInstanceSpec::random(dims.x, dims.y, eps, &mut rng)?;
            let model = build_hard_instance(&spec)?;
            let pack = match packing {
                Some(n) => {
                    let (xp, yp) = (spec.x_prime(), spec.y_prime());
                    let mut prng = rng.derive(1);
                    Some(build_packing(xp, yp, &mut prng, default_min_l1(xp, yp), n, 100_000)?)
                }
                None => None,
            };
            if let Some(p) = &pack {
                if p.members.len() < packing.unwrap_or(0) {
                    eprintln!("warning: packing has {} of {} requested members", p.members.len(), packing.unwrap_or(0));
                }
            }
            save_model(&out, &model)?;
            let side = sidecar_path(&out);
            std::fs::write(&side, serde_json::to_string_pretty(&HardSidecar::new(&spec, pack))?)
                .with_context(|| format!("writing {}", side.display()))?;
            println!("{} {}", out.display(), side.display());
        }
        Command::Sweep { config } => {
            let (cfg, base) = SweepConfig::load(&config)?;
            let runs = run_sweep(&cfg, &base)?;
            for r in &runs {
                for w in &r.log.warnings {
                    eprintln!("warning [{}]: {w}", r.log.fingerprint);
                }
            }
            println!("{} runs written to {}", runs.len(), base.join(&cfg.output).display());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<HomdpError>() {
        Some(HomdpError::BudgetExceeded { .. }) => 3,
        Some(e) if e.is_validation() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
