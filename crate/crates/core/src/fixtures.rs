//! Canonical small models used by tests, examples and the CLI demos.

use crate::fk_model::DiscreteFk;
use crate::pgibbs::JointModel;
use crate::rng::CounterRng;

/// Two states, two steps: `m1 = (1/2, 1/2)`, sticky `M_2`, `G_1 = (1, 2)`, `G_2 = (1, 3)`.
pub fn model_a() -> DiscreteFk<f64> {
    DiscreteFk::from_tables(vec![0.5, 0.5], vec![vec![vec![0.75, 0.25], vec![0.25, 0.75]]], vec![vec![1.0, 2.0], vec![1.0, 3.0]])
        .expect("model A is valid")
}

/// Same as [`model_a`] but with unit potentials, so the target is the Markov path law.
pub fn model_a_flat() -> DiscreteFk<f64> {
    DiscreteFk::from_tables(vec![0.5, 0.5], vec![vec![vec![0.75, 0.25], vec![0.25, 0.75]]], vec![vec![1.0, 1.0], vec![1.0, 1.0]])
        .expect("flat model is valid")
}

fn random_simplex(rng: &mut CounterRng, s: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..s).map(|_| 0.2 + 0.8 * rng.uniform()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

/// A model with strictly positive tables drawn from a seeded generator.
pub fn random_model(seed: u64, states: usize, horizon: usize) -> DiscreteFk<f64> {
    let mut rng = CounterRng::from_seed(seed.wrapping_mul(31).wrapping_add((states * 101 + horizon) as u64));
    let m1 = random_simplex(&mut rng, states);
    let m = (1..horizon).map(|_| (0..states).map(|_| random_simplex(&mut rng, states)).collect()).collect();
    let g = (0..horizon).map(|_| (0..states).map(|_| 0.5 + 2.5 * rng.uniform()).collect()).collect();
    DiscreteFk::from_tables(m1, m, g).expect("random tables are valid")
}

/// Every model the exhaustive checks sweep: model A plus one random model per `(T, S)`
/// with `T in 1..=3`, `S in 2..=3`.
pub fn small_models() -> Vec<(String, DiscreteFk<f64>)> {
    let mut out = vec![("model_a".to_string(), model_a())];
    for t in 1..=3 {
        for s in 2..=3 {
            out.push((format!("random_T{t}_S{s}"), random_model(17, s, t)));
        }
    }
    out
}

fn sticky_tables(k: usize, unbounded: bool) -> DiscreteFk<f64> {
    let s = 2 * k + 2;
    // Poisson(2) restricted to {1..K}.
    let mut m1 = vec![0.0; s];
    let mut w = 1.0;
    for (z, v) in m1.iter_mut().enumerate().take(k + 1).skip(1) {
        w *= 2.0 / z as f64;
        *v = w;
    }
    let total: f64 = m1.iter().sum();
    m1.iter_mut().for_each(|v| *v /= total);
    let mut m2 = vec![vec![0.0; s]; s];
    for (z, row) in m2.iter_mut().enumerate() {
        if (1..=k).contains(&z) {
            row[2 * z] = 0.5;
            row[2 * z + 1] = 0.5;
        } else {
            row[z] = 1.0;
        }
    }
    let g1 = vec![1.0; s];
    let g2 = if unbounded { (0..s).map(|z| z as f64).collect() } else { vec![1.0; s] };
    let alphabet = (0..s).map(|z| z.to_string()).collect();
    DiscreteFk::new(alphabet, m1, vec![m2], vec![g1, g2]).expect("sticky tables are valid")
}

/// The unbounded-potential example with `M_1` a Poisson law truncated to `{1..K}`: `M_2(z, .)` splits
/// evenly between `2z` and `2z+1`, `G_1 = 1`, `G_2(z) = z`. State labels equal indices.
pub fn sticky_example(k: usize) -> DiscreteFk<f64> {
    sticky_tables(k, true)
}

/// The same chain with `G_2 = 1`, so potentials are bounded uniformly in `K`.
pub fn sticky_control(k: usize) -> DiscreteFk<f64> {
    sticky_tables(k, false)
}

/// Two parameter values over single-step models on three states.
pub fn joint_single_step() -> JointModel<f64> {
    let a = DiscreteFk::from_tables(vec![0.5, 0.3, 0.2], vec![], vec![vec![1.0, 2.0, 0.5]]).expect("valid");
    let b = DiscreteFk::from_tables(vec![0.2, 0.3, 0.5], vec![], vec![vec![2.0, 1.0, 1.0]]).expect("valid");
    JointModel::new(vec!["a".into(), "b".into()], vec![0.4, 0.6], vec![a, b]).expect("valid joint model")
}

/// Two parameter values over two-step, two-state models (the first is [`model_a`]).
pub fn joint_two_step() -> JointModel<f64> {
    let b = DiscreteFk::from_tables(vec![0.3, 0.7], vec![vec![vec![0.6, 0.4], vec![0.2, 0.8]]], vec![vec![2.0, 1.0], vec![1.0, 1.5]])
        .expect("valid");
    JointModel::new(vec!["a".into(), "b".into()], vec![0.5, 0.5], vec![model_a(), b]).expect("valid joint model")
}
