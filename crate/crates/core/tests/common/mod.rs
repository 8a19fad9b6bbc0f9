//! Independent reference computations used by the integration tests.
//! Nothing here calls the planner, the enumerator or the simulator.
#![allow(dead_code)]

use homdp_core::{
    ActionDist, EmissionTable, HistoryPolicy, HomdpModel, ObservedHistory, RewardTable, RngStream,
    TransitionTable,
};

fn random_row(rng: &mut RngStream, n: usize, sparse: bool) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| rng.uniform() + 1e-3).collect();
    if sparse && n > 1 && rng.uniform() < 0.3 {
        let z = rng.below(n);
        w[z] = 0.0;
    }
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Random model; with `sparse`, some rows get an exact zero.
pub fn random_model(rng: &mut RngStream, x: usize, y: usize, a: usize, h: usize, sparse: bool) -> HomdpModel {
    let rho = random_row(rng, x, sparse);
    let mut t = Vec::with_capacity(x * a * x);
    for _ in 0..x * a {
        t.extend(random_row(rng, x, sparse));
    }
    let mut o = Vec::with_capacity(x * y);
    for _ in 0..x {
        o.extend(random_row(rng, y, sparse));
    }
    let r: Vec<f64> = (0..x * a).map(|_| rng.uniform()).collect();
    HomdpModel::new(
        h,
        rho,
        TransitionTable::new(x, a, t).unwrap(),
        EmissionTable::new(x, y, o).unwrap(),
        RewardTable::new(x, a, r).unwrap(),
    )
    .unwrap()
}

/// Same latent dynamics and reward, fresh random `T` and `O`.
pub fn perturbed_pair(rng: &mut RngStream, m: &HomdpModel) -> HomdpModel {
    let other = random_model(rng, m.num_states(), m.num_obs(), m.num_actions(), m.horizon, false);
    HomdpModel::new(m.horizon, m.rho.clone(), other.trans, other.emit, m.reward.clone()).unwrap()
}

fn fnv(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Policy whose choice at each history is a fixed pseudo-random function of
/// the history, either a point mass or a full-support mixture.
pub struct HashedPolicy {
    pub seed: u64,
    pub num_actions: usize,
    pub stochastic: bool,
}

impl HistoryPolicy for HashedPolicy {
    fn decide(&self, history: &ObservedHistory) -> ActionDist {
        let bytes: Vec<u8> = history.obs.iter().map(|&y| y as u8).chain([0xff]).chain(history.acts.iter().map(|&a| a as u8)).collect();
        let mut rng = RngStream::new(self.seed).derive(fnv(&bytes));
        if self.stochastic {
            let w: Vec<f64> = (0..self.num_actions).map(|_| rng.uniform() + 0.05).collect();
            let t: f64 = w.iter().sum();
            ActionDist::Weights(w.iter().map(|v| v / t).collect())
        } else {
            ActionDist::Point(rng.below(self.num_actions))
        }
    }
}

/// Value by brute-force recursion over latent state and observed history.
pub fn oracle_value(m: &HomdpModel, pi: &dyn HistoryPolicy) -> f64 {
    fn go(m: &HomdpModel, pi: &dyn HistoryPolicy, x: usize, tau: &mut ObservedHistory) -> f64 {
        let na = m.num_actions();
        let d = pi.decide(tau);
        let total: f64 = match &d {
            ActionDist::Weights(w) => w.iter().sum(),
            _ => 1.0,
        };
        let mut v = 0.0;
        for a in 0..na {
            let p = match &d {
                ActionDist::Point(b) => (*b == a) as u8 as f64,
                ActionDist::Uniform => 1.0 / na as f64,
                ActionDist::Weights(w) => w[a] / total,
            };
            if p == 0.0 {
                continue;
            }
            let mut q = m.reward.get(x, a);
            if tau.obs.len() < m.horizon {
                tau.acts.push(a);
                for x2 in 0..m.num_states() {
                    let pt = m.trans.get(x, a, x2);
                    if pt == 0.0 {
                        continue;
                    }
                    for y in 0..m.num_obs() {
                        let po = m.emit.get(x2, y);
                        if po == 0.0 {
                            continue;
                        }
                        tau.obs.push(y);
                        q += pt * po * go(m, pi, x2, tau);
                        tau.obs.pop();
                    }
                }
                tau.acts.pop();
            }
            v += p * q;
        }
        v
    }
    let mut tau = ObservedHistory::default();
    let mut v = 0.0;
    for x in 0..m.num_states() {
        for y in 0..m.num_obs() {
            let w = m.rho[x] * m.emit.get(x, y);
            if w > 0.0 {
                tau.obs.push(y);
                v += w * go(m, pi, x, &mut tau);
                tau.obs.pop();
            }
        }
    }
    v
}

/// Deterministic H = 2 policy given as `first[y1]` and `second[y1][y2]`;
/// the second action is only ever queried after `a1 = first[y1]`.
pub struct TwoStep {
    pub first: Vec<usize>,
    pub second: Vec<Vec<usize>>,
}

impl HistoryPolicy for TwoStep {
    fn decide(&self, h: &ObservedHistory) -> ActionDist {
        match h.obs.len() {
            1 => ActionDist::Point(self.first[h.obs[0]]),
            _ => ActionDist::Point(self.second[h.obs[0]][h.obs[1]]),
        }
    }
}

/// Every deterministic H = 2 policy, up to behavior on unreachable
/// histories: `A^Y * A^(Y^2)` of them.
pub fn all_two_step_policies(y: usize, a: usize) -> Vec<TwoStep> {
    let digits = |mut n: usize, len: usize| -> Vec<usize> {
        (0..len)
            .map(|_| {
                let d = n % a;
                n /= a;
                d
            })
            .collect()
    };
    let n1 = a.pow(y as u32);
    let n2 = a.pow((y * y) as u32);
    let mut out = Vec::with_capacity(n1 * n2);
    for i in 0..n1 {
        for j in 0..n2 {
            let flat = digits(j, y * y);
            out.push(TwoStep { first: digits(i, y), second: flat.chunks(y).map(<[usize]>::to_vec).collect() });
        }
    }
    out
}

/// Finite-horizon MDP optimum by value iteration on latent states.
pub fn mdp_optimum(m: &HomdpModel) -> f64 {
    let (nx, na) = (m.num_states(), m.num_actions());
    let mut v = vec![0.0; nx];
    for _ in 0..m.horizon {
        v = (0..nx)
            .map(|x| {
                (0..na)
                    .map(|a| m.reward.get(x, a) + (0..nx).map(|x2| m.trans.get(x, a, x2) * v[x2]).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
    }
    m.rho.iter().zip(&v).map(|(p, q)| p * q).sum()
}

fn draw(rng: &mut RngStream, p: &[f64]) -> usize {
    let u = rng.uniform();
    let mut c = 0.0;
    for (i, &q) in p.iter().enumerate() {
        c += q;
        if u < c {
            return i;
        }
    }
    p.iter().rposition(|&q| q > 0.0).unwrap()
}

/// Monte Carlo mean and standard error with an inverse-CDF sampler of its own.
pub fn monte_carlo(m: &HomdpModel, pi: &dyn HistoryPolicy, episodes: usize, seed: u64) -> (f64, f64) {
    let mut rng = RngStream::new(seed);
    let na = m.num_actions();
    let (mut s, mut s2) = (0.0, 0.0);
    let mut tau = ObservedHistory::default();
    for _ in 0..episodes {
        tau.obs.clear();
        tau.acts.clear();
        let mut x = draw(&mut rng, &m.rho);
        let mut g = 0.0;
        for _ in 0..m.horizon {
            tau.obs.push(draw(&mut rng, m.emit.row(x)));
            let a = match pi.decide(&tau) {
                ActionDist::Point(a) => a,
                ActionDist::Uniform => rng.below(na),
                ActionDist::Weights(w) => {
                    let t: f64 = w.iter().sum();
                    let p: Vec<f64> = w.iter().map(|v| v / t).collect();
                    draw(&mut rng, &p)
                }
            };
            tau.acts.push(a);
            g += m.reward.get(x, a);
            x = draw(&mut rng, m.trans.row(x, a));
        }
        s += g;
        s2 += g * g;
    }
    let n = episodes as f64;
    let mean = s / n;
    let var = (s2 / n - mean * mean) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Bayes posterior over latent states given a history, by summing joint
/// probabilities of all latent paths.
pub fn posterior_bruteforce(m: &HomdpModel, tau: &ObservedHistory) -> Vec<f64> {
    let nx = m.num_states();
    let h = tau.obs.len();
    let mut post = vec![0.0; nx];
    let total_paths = nx.pow(h as u32);
    for code in 0..total_paths {
        let mut c = code;
        let path: Vec<usize> = (0..h)
            .map(|_| {
                let d = c % nx;
                c /= nx;
                d
            })
            .collect();
        let mut p = m.rho[path[0]] * m.emit.get(path[0], tau.obs[0]);
        for i in 1..h {
            p *= m.trans.get(path[i - 1], tau.acts[i - 1], path[i]) * m.emit.get(path[i], tau.obs[i]);
        }
        post[path[h - 1]] += p;
    }
    let z: f64 = post.iter().sum();
    post.iter().map(|v| v / z).collect()
}
