//! Train-time interaction protocol: deploy a policy on observed data only,
//! then reveal the latent states once the episode is over.

use rayon::prelude::*;

use crate::error::{HomdpError, Result};
use crate::model::{HomdpModel, LatentTrajectory, ObservedHistory};
use crate::policy::HistoryPolicy;
use crate::rng::RngStream;

/// One finished episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    /// `(y_{1:H}, a_{1:H})`.
    pub observed: ObservedHistory,
    /// `x_{1:H+1}`, revealed after the episode.
    pub latent: Vec<usize>,
    pub rewards: Vec<f64>,
    pub cumulative_reward: f64,
}

impl EpisodeRecord {
    pub fn to_latent_trajectory(&self) -> LatentTrajectory {
        LatentTrajectory {
            states: self.latent.clone(),
            obs: self.observed.obs.clone(),
            acts: self.observed.acts.clone(),
            rewards: self.rewards.clone(),
        }
    }
}

/// Runs one episode. Draw order per step: `y_h ~ O(.|x_h)`, `a_h ~ pi(.|tau_h)`,
/// `x_{h+1} ~ T(.|x_h, a_h)`, after an initial `x_1 ~ rho`.
pub fn run_episode(
    env: &HomdpModel,
    policy: &(impl HistoryPolicy + ?Sized),
    rng: &mut RngStream,
) -> Result<EpisodeRecord> {
    let horizon = env.horizon;
    let na = env.num_actions();
    let mut latent = Vec::with_capacity(horizon + 1);
    let mut rewards = Vec::with_capacity(horizon);
    let mut history = ObservedHistory {
        obs: Vec::with_capacity(horizon),
        acts: Vec::with_capacity(horizon),
    };

    let mut x = rng.categorical(&env.rho);
    latent.push(x);
    for _ in 0..horizon {
        let y = rng.categorical(env.emit.row(x));
        history.obs.push(y);
        let dist = policy.decide(&history);
        if !dist.is_valid(na) {
            return Err(HomdpError::UndefinedPolicy { history: history.to_string() });
        }
        let a = dist.sample(na, rng);
        history.acts.push(a);
        rewards.push(env.reward.get(x, a));
        x = rng.categorical(env.trans.row(x, a));
        latent.push(x);
    }
    let cumulative_reward = rewards.iter().sum();
    Ok(EpisodeRecord { observed: history, latent, rewards, cumulative_reward })
}

#[derive(Clone, Debug)]
pub struct BatchResult {
    pub episodes: Vec<EpisodeRecord>,
    pub mean: f64,
    /// Standard error of the mean; reported as 0 when `n = 1`.
    pub stderr: f64,
}

/// `n` independent episodes; episode `i` uses `rng.derive(i)`, so the result
/// does not depend on the parallel schedule.
pub fn run_batch(
    env: &HomdpModel,
    policy: &(impl HistoryPolicy + ?Sized),
    n: usize,
    rng: &RngStream,
) -> Result<BatchResult> {
    if n == 0 {
        return Err(HomdpError::EmptyBatch);
    }
    let episodes = (0..n)
        .into_par_iter()
        .map(|i| run_episode(env, policy, &mut rng.derive(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let (mean, stderr) = mean_and_stderr(episodes.iter().map(|e| e.cumulative_reward));
    Ok(BatchResult { episodes, mean, stderr })
}

pub(crate) fn mean_and_stderr(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EmissionTable, RewardTable, TransitionTable};
    use crate::policy::{ConstantPolicy, UniformPolicy};

    fn single_state(horizon: usize) -> HomdpModel {
        HomdpModel::new(
            horizon,
            vec![1.0],
            TransitionTable::uniform(1, 1),
            EmissionTable::uniform(1, 1),
            RewardTable::constant(1, 1, 1.0),
        )
        .unwrap()
    }

    fn cycle() -> HomdpModel {
        let trans = TransitionTable::from_nested(&[
            vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            vec![vec![1.0, 0.0], vec![1.0, 0.0]],
        ])
        .unwrap();
        let emit = EmissionTable::from_nested(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        HomdpModel::new(
            5,
            vec![1.0, 0.0],
            trans,
            emit,
            RewardTable::from_fn(2, 2, |x, _| x as f64),
        )
        .unwrap()
    }

    #[test]
    fn single_state_chain() {
        let rec = run_episode(&single_state(3), &ConstantPolicy(0), &mut RngStream::new(1)).unwrap();
        assert_eq!(rec.cumulative_reward, 3.0);
        assert_eq!(rec.latent, vec![0, 0, 0, 0]);
    }

    #[test]
    fn deterministic_cycle() {
        let rec = run_episode(&cycle(), &ConstantPolicy(0), &mut RngStream::new(3)).unwrap();
        assert_eq!(rec.latent, vec![0, 1, 0, 1, 0, 1]);
        assert_eq!(rec.observed.obs, vec![0, 1, 0, 1, 0]);
        assert_eq!(rec.cumulative_reward, 2.0);
    }

    #[test]
    fn same_seed_same_episode() {
        let m = cycle();
        let a = run_episode(&m, &UniformPolicy, &mut RngStream::new(11)).unwrap();
        let b = run_episode(&m, &UniformPolicy, &mut RngStream::new(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lengths_and_reward_consistency() {
        let m = cycle();
        let rec = run_episode(&m, &UniformPolicy, &mut RngStream::new(5)).unwrap();
        assert_eq!(rec.latent.len(), m.horizon + 1);
        assert_eq!(rec.observed.obs.len(), m.horizon);
        assert_eq!(rec.observed.acts.len(), m.horizon);
        for h in 0..m.horizon {
            assert_eq!(rec.rewards[h], m.reward.get(rec.latent[h], rec.observed.acts[h]));
        }
    }

    #[test]
    fn batch_of_one_has_zero_stderr() {
        let b = run_batch(&cycle(), &UniformPolicy, 1, &RngStream::new(0)).unwrap();
        assert_eq!(b.mean, b.episodes[0].cumulative_reward);
        assert_eq!(b.stderr, 0.0);
    }

    #[test]
    fn zero_variance_batch() {
        let b = run_batch(&single_state(2), &UniformPolicy, 100, &RngStream::new(0)).unwrap();
        assert_eq!(b.mean, 2.0);
        assert_eq!(b.stderr, 0.0);
    }

    #[test]
    fn empty_batch_rejected() {
        assert!(matches!(
            run_batch(&cycle(), &UniformPolicy, 0, &RngStream::new(0)),
            Err(HomdpError::EmptyBatch)
        ));
    }

    #[test]
    fn invalid_policy_output_reported() {
        let bad = crate::policy::FnPolicy(|_: &ObservedHistory| crate::policy::ActionDist::Point(7));
        let err = run_episode(&cycle(), &bad, &mut RngStream::new(0)).unwrap_err();
        assert!(matches!(err, HomdpError::UndefinedPolicy { .. }));
    }
}
