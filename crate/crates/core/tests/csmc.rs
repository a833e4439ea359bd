use pmcmc_lab::bounds::epsilon_bounded;
use pmcmc_lab::csmc::{icsmc_step, run_csmc_with_lineage};
use pmcmc_lab::fixtures::{model_a, random_model};
use pmcmc_lab::oracle::exact_pn_row;
use pmcmc_lab::smc::ParticleSystem;
use pmcmc_lab::{
    artificial_joint_step, exact_pn_matrix, exact_target, icsmc_chain, run_csmc, select_path, DiscreteFk, Error, FeynmanKacModel,
    Particles, Streams, Trace, Trajectory,
};
use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn chi_square_ok(counts: &[u64], probs: &[f64]) -> (f64, f64) {
    let total: u64 = counts.iter().sum();
    let stat: f64 = counts.iter().zip(probs).map(|(&o, &p)| (o as f64 - p * total as f64).powi(2) / (p * total as f64)).sum();
    let crit = ChiSquared::new((probs.len() - 1) as f64).unwrap().inverse_cdf(1.0 - 1e-6);
    (stat, crit)
}

#[test]
fn free_particle_is_drawn_from_the_initial_law() {
    let m = random_model(4, 3, 1);
    for n in [2usize, 3] {
        let mut counts = vec![0u64; 3];
        for r in 0..100_000u64 {
            let sys: Particles = run_csmc(&m, n, &[1], &Streams::new(8).child(r)).unwrap();
            assert_eq!(sys.states[0][0], 1);
            for &z in &sys.states[0][1..] {
                counts[z] += 1;
            }
        }
        let (stat, crit) = chi_square_ok(&counts, m.m1());
        assert!(stat < crit, "N={n}: {stat} vs {crit}");
    }
}

#[test]
fn one_particle_replays_the_reference() {
    let m = model_a();
    for r in 0..100 {
        let (y, st) = icsmc_step::<_, f64>(&m, 1, &[1, 0], &Streams::new(r)).unwrap();
        assert_eq!(y.points, vec![1, 0]);
        assert_eq!(st.retained, 2);
    }
}

#[test]
fn reference_with_zero_potential_is_rejected() {
    let m = DiscreteFk::from_tables(vec![0.5, 0.5], vec![], vec![vec![0.0, 1.0]]).unwrap();
    let r = run_csmc::<_, f64>(&m, 3, &[0], &Streams::new(0));
    assert!(matches!(r, Err(Error::PinnedPathZeroPotential { time: 1 })), "{r:?}");
    assert!(matches!(run_csmc::<_, f64>(&model_a(), 3, &[0], &Streams::new(0)), Err(Error::DimensionMismatch(_))));
}

#[test]
fn path_selection_traces_ancestors() {
    let sys = ParticleSystem {
        states: vec![vec![4usize, 5], vec![6, 7]],
        ancestors: vec![vec![0, 0]],
        final_index: 1,
        log_potentials: vec![vec![0.0f64; 2]; 2],
    };
    let y = select_path(&sys);
    assert_eq!(y.points, vec![4, 7]);
    assert_eq!(y.lineage, Some(vec![0, 1]));
    let pinned = ParticleSystem { final_index: 0, ..sys };
    assert_eq!(select_path(&pinned).points, vec![4, 6]);
}

#[test]
fn selection_frequencies_match_the_enumerated_kernel() {
    let draws = 1_000_000u64;
    for (fi, m) in [model_a(), random_model(17, 2, 2)].into_iter().enumerate() {
        let target = exact_target(&m).unwrap();
        let x = target.paths()[fi + 1].clone();
        let row = exact_pn_row(&m, &target, 2, &x, &[0, 0]).unwrap();
        let counts = (0..draws)
            .into_par_iter()
            .fold(
                || vec![0u64; row.len()],
                |mut c, d| {
                    let sys: Particles = run_csmc(&m, 2, &x, &Streams::new(40 + fi as u64).child(d)).unwrap();
                    c[target.index_of(&select_path(&sys).points).unwrap()] += 1;
                    c
                },
            )
            .reduce(|| vec![0u64; row.len()], |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect());
        for (&c, &p) in counts.iter().zip(&row) {
            let sd = (p * (1.0 - p) / draws as f64).sqrt();
            assert!((c as f64 / draws as f64 - p).abs() <= 4.0 * sd, "fixture {fi}: {c} vs {p}");
        }
    }
}

#[test]
fn empirical_tv_after_five_iterations_respects_the_bound() {
    let m = model_a();
    let n = 16;
    let reps = 100_000u64;
    let target = exact_target(&m).unwrap();
    let eps = epsilon_bounded(&m, n).unwrap().epsilon;
    let counts = (0..reps)
        .into_par_iter()
        .fold(
            || vec![0u64; target.len()],
            |mut c, r| {
                let tr: Trace = icsmc_chain(&m, n, &[0, 0], 5, &Streams::new(55).child(r)).unwrap();
                c[target.index_of(&tr.trajectories[5].points).unwrap()] += 1;
                c
            },
        )
        .reduce(|| vec![0u64; target.len()], |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect());
    let tv: f64 = counts.iter().zip(target.probs()).map(|(&c, &p)| (c as f64 / reps as f64 - p).abs()).sum::<f64>() / 2.0;
    let sigma: f64 = target.probs().iter().map(|p| (p * (1.0 - p) / reps as f64).sqrt()).sum::<f64>() / 2.0;
    assert!(tv <= (1.0 - eps).powi(5) + 4.0 * sigma, "tv {tv}, bound {}", (1.0 - eps).powi(5));
}

#[test]
fn chain_trace_shape_and_csv() {
    let m = model_a();
    let empty: Trace = icsmc_chain(&m, 4, &[1, 1], 0, &Streams::new(1)).unwrap();
    assert_eq!(empty.trajectories, vec![Trajectory::new(vec![1, 1])]);
    assert_eq!(empty.iterations(), 0);

    let tr: Trace = icsmc_chain(&m, 4, &[1, 1], 3, &Streams::new(1)).unwrap();
    assert_eq!(tr.trajectories.len(), 4);
    assert_eq!(tr.stats.len(), 3);
    assert!(tr.trajectories.iter().all(|t| t.len() == 2));
    let mut buf = Vec::new();
    tr.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "iteration,log_gamma_hat,retained_count,z1,z2");
    assert_eq!(lines[1], "0,,,1,1");
    assert_eq!(lines.len(), 5);
}

#[test]
fn pinned_particle_wins_half_the_time_with_flat_weights() {
    // T = 1, S = 4, unit potentials: the selected particle is the pinned one with
    // probability 1/2, and the state repeats with probability 1/2 + 1/(2S).
    let m = DiscreteFk::from_tables(vec![0.25; 4], vec![], vec![vec![1.0; 4]]).unwrap();
    let iters = 100_000;
    let mut pinned = 0;
    let mut x = vec![0usize];
    let mut retained = 0;
    for j in 0..iters {
        let sys: Particles = run_csmc(&m, 2, &x, &Streams::new(2).child(j)).unwrap();
        let y = select_path(&sys);
        pinned += usize::from(y.lineage.as_deref() == Some(&[0][..]));
        retained += usize::from(y.points == x);
        x = y.points;
    }
    let sd = (0.25 / iters as f64).sqrt();
    assert!((pinned as f64 / iters as f64 - 0.5).abs() < 5.0 * sd);
    let p = 0.5 + 0.5 / 4.0;
    let sd = (p * (1.0 - p) / iters as f64).sqrt();
    assert!((retained as f64 / iters as f64 - p).abs() < 5.0 * sd);
}

#[test]
fn artificial_joint_kernel_matches_icsmc() {
    let m = model_a();
    let target = exact_target(&m).unwrap();
    let chain = exact_pn_matrix(&m, 2).unwrap();
    let x = vec![0usize, 1];
    let xi = chain.index_of(&x).unwrap();
    let draws = 400_000u64;
    let mut counts = vec![0u64; target.len()];
    for d in 0..draws {
        let y = artificial_joint_step::<_, f64>(&m, 2, &x, None, &Streams::new(66).child(d)).unwrap();
        counts[target.index_of(&y.points).unwrap()] += 1;
    }
    for (yi, &c) in counts.iter().enumerate() {
        let p = chain.kernel[(xi, yi)];
        let sd = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((c as f64 / draws as f64 - p).abs() <= 5.0 * sd);
    }
    let stay = artificial_joint_step::<_, f64>(&m, 1, &x, None, &Streams::new(0)).unwrap();
    assert_eq!(stay.points, x);
    assert!(run_csmc_with_lineage::<_, f64>(&m, 2, &x, &[0, 2], &Streams::new(0)).is_err());
}

/// Gaussian random walk observed through a bounded potential; exercises the generic interface.
struct Walk;

impl FeynmanKacModel<f64> for Walk {
    type State = f64;
    fn horizon(&self) -> usize {
        6
    }
    fn sample_initial<G: Rng + ?Sized>(&self, rng: &mut G) -> f64 {
        rng.random::<f64>() - 0.5
    }
    fn sample_transition<G: Rng + ?Sized>(&self, _: usize, prev: &f64, rng: &mut G) -> f64 {
        prev + rng.random::<f64>() - 0.5
    }
    fn log_potential(&self, time: usize, z: &f64) -> f64 {
        -0.5 * (z - 0.1 * time as f64).powi(2)
    }
}

#[test]
fn generic_models_run_through_the_same_engine() {
    let x = vec![0.0; 6];
    let tr = icsmc_chain::<_, f64>(&Walk, 32, &x, 50, &Streams::new(3)).unwrap();
    assert_eq!(tr.trajectories.len(), 51);
    assert!(tr.stats.iter().all(|s| s.log_gamma_hat.is_finite()));
    let sys = run_csmc::<_, f64>(&Walk, 8, &x, &Streams::new(4)).unwrap();
    assert!(sys.states.iter().all(|zs| zs[0] == 0.0));
    sys.validate(&Walk).unwrap();
}
