//! Fixtures shared by the criterion benchmarks in `benches/`.

use homdp_core::{EmissionTable, HomdpModel, RewardTable, RngStream, TransitionTable};

fn row(rng: &mut RngStream, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.uniform() + 0.01).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Dense random model of the given size; identical for identical arguments.
pub fn random_model(x: usize, y: usize, a: usize, h: usize, seed: u64) -> HomdpModel {
    let mut rng = RngStream::new(seed);
    let rho = row(&mut rng, x);
    let trans: Vec<f64> = (0..x * a).flat_map(|_| row(&mut rng, x)).collect();
    let emit: Vec<f64> = (0..x).flat_map(|_| row(&mut rng, y)).collect();
    let reward: Vec<f64> = (0..x * a).map(|_| rng.uniform()).collect();
    HomdpModel::new(
        h,
        rho,
        TransitionTable::new(x, a, trans).expect("rows sum to 1"),
        EmissionTable::new(x, y, emit).expect("rows sum to 1"),
        RewardTable::new(x, a, reward).expect("rewards in [0, 1]"),
    )
    .expect("valid model")
}
