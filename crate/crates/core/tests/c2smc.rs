use pmcmc_lab::bounds::potential_ratio;
use pmcmc_lab::c2smc::{
    alpha_constant, beta_delta_constants, c2smc_expectation_bruteforce, c2smc_expectation_closed_form, run_c2smc, ClosedFormStrategy,
    IndexChain,
};
use pmcmc_lab::fixtures::{model_a, random_model, small_models};
use pmcmc_lab::{exact_target, gamma_hat, DiscreteFk, Error, Particles, Streams};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use ClosedFormStrategy::{BackwardRecursion, SubsetEnumeration};

fn all_paths(s: usize, t: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..t {
        out = out.into_iter().flat_map(|p| (0..s).map(move |z| [p.clone(), vec![z]].concat())).collect();
    }
    out
}

fn pair_product(m: &DiscreteFk<f64>, x: &[usize], y: &[usize]) -> f64 {
    (0..m.horizon()).map(|t| (m.potential(t + 1)[x[t]] + m.potential(t + 1)[y[t]]) / 2.0).product()
}

#[test]
fn two_particles_leave_nothing_random() {
    let m = model_a();
    let (x, y) = ([0, 1], [1, 1]);
    let expect = pair_product(&m, &x, &y);
    for r in 0..20 {
        let sys: Particles = run_c2smc(&m, 2, &x, &[1, 1], &y, &Streams::new(r)).unwrap();
        assert_eq!(sys.states, vec![vec![0, 1], vec![1, 1]]);
        assert!((gamma_hat(&sys).unwrap().value() - expect).abs() < 1e-14);
    }
    for (_, m) in small_models() {
        for x in all_paths(m.num_states(), m.horizon()) {
            for y in all_paths(m.num_states(), m.horizon()) {
                let v = c2smc_expectation_closed_form(&m, 2, &x, &y, BackwardRecursion).unwrap();
                assert!((v - pair_product(&m, &x, &y)).abs() <= 1e-14 * v);
            }
        }
    }
}

#[test]
fn lineage_clashes_are_rejected() {
    let m = model_a();
    let r = run_c2smc::<_, f64>(&m, 3, &[0, 0], &[0, 1], &[1, 0], &Streams::new(0));
    assert!(matches!(r, Err(Error::LineageClash { time: 1 })), "{r:?}");
    // Sharing time 2 with x while the time-1 parents differ.
    let r = run_c2smc::<_, f64>(&m, 3, &[0, 0], &[1, 0], &[1, 0], &Streams::new(0));
    assert!(matches!(r, Err(Error::LineageClash { time: 2 })), "{r:?}");
    // Coalescing onto x over the whole path is allowed when the paths agree.
    assert!(run_c2smc::<_, f64>(&m, 3, &[0, 1], &[0, 0], &[0, 1], &Streams::new(0)).is_ok());
}

#[test]
fn third_particle_is_drawn_from_the_initial_law() {
    let m = random_model(4, 3, 1);
    let mut counts = [0u64; 3];
    for r in 0..100_000u64 {
        let sys: Particles = run_c2smc(&m, 3, &[0], &[1], &[2], &Streams::new(5).child(r)).unwrap();
        counts[sys.states[0][2]] += 1;
    }
    let total = 100_000.0;
    let stat: f64 = counts.iter().zip(m.m1()).map(|(&o, &p)| (o as f64 - p * total).powi(2) / (p * total)).sum();
    assert!(stat < ChiSquared::new(2.0).unwrap().inverse_cdf(1.0 - 1e-6), "{stat}");
}

#[test]
fn closed_form_examples() {
    let single = DiscreteFk::<f64>::from_tables(vec![0.5, 0.5], vec![], vec![vec![1.0, 3.0]]).unwrap();
    // (1/3)[1 * 2 + (1 + 3)]
    let hand = (2.0 + 4.0) / 3.0;
    for s in [SubsetEnumeration, BackwardRecursion] {
        assert!((c2smc_expectation_closed_form(&single, 3, &[0], &[1], s).unwrap() - hand).abs() < 1e-15);
    }
    let m = model_a();
    let cf = c2smc_expectation_closed_form(&m, 3, &[0, 0], &[1, 1], SubsetEnumeration).unwrap();
    let bf = c2smc_expectation_bruteforce(&m, 3, &[0, 0], &[1, 1]).unwrap();
    assert!((cf - bf).abs() <= 1e-12 * bf);
    let flat = DiscreteFk::<f64>::from_tables(vec![0.2, 0.8], vec![vec![vec![0.3, 0.7], vec![0.9, 0.1]]], vec![vec![1.0; 2]; 2]).unwrap();
    for n in 2..12 {
        for s in [SubsetEnumeration, BackwardRecursion] {
            assert!((c2smc_expectation_closed_form(&flat, n, &[0, 1], &[1, 0], s).unwrap() - 1.0).abs() < 1e-14);
        }
    }
    assert!(c2smc_expectation_closed_form(&m, 1, &[0, 0], &[1, 1], BackwardRecursion).is_err());
}

#[test]
fn closed_form_agrees_with_simulation_beyond_enumeration() {
    // T = 12 and N = 6 are out of reach of enumeration.
    let m = random_model(9, 3, 12);
    let x = vec![0; 12];
    let y: Vec<usize> = (0..12).map(|t| t % 3).collect();
    let k: Vec<usize> = (0..12).map(|t| 1 + t % 5).collect();
    let exact = c2smc_expectation_closed_form(&m, 6, &x, &y, BackwardRecursion).unwrap();
    let subset = c2smc_expectation_closed_form(&m, 6, &x, &y, SubsetEnumeration).unwrap();
    assert!((exact - subset).abs() <= 1e-12 * exact);
    let reps = 200_000u64;
    let vals: Vec<f64> = (0..reps)
        .map(|r| gamma_hat(&run_c2smc::<_, f64>(&m, 6, &x, &k, &y, &Streams::new(12).child(r)).unwrap()).unwrap().value())
        .collect();
    let mean = vals.iter().sum::<f64>() / reps as f64;
    let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64 / reps as f64).sqrt();
    assert!((mean - exact).abs() < 5.0 * sd, "mean {mean} exact {exact} sd {sd}");
}

#[test]
fn closed_form_respects_both_upper_bounds() {
    let mut models = small_models();
    models.push(("random_T5_S2".into(), random_model(3, 2, 5)));
    for (name, m) in models {
        let g = m.gamma();
        let ratio = potential_ratio(&m);
        let alpha = alpha_constant(&m);
        let t = m.horizon() as i32;
        for n in 2..=8 {
            let nf = n as f64;
            let bounded = g * (1.0 + (1.0 - (1.0 - 2.0 / nf).powi(t)) * (ratio - 1.0));
            let mixing = g * (1.0 + 2.0 * (alpha - 1.0) / nf).powi(t);
            for x in all_paths(m.num_states(), m.horizon()) {
                for y in all_paths(m.num_states(), m.horizon()) {
                    let v = c2smc_expectation_closed_form(&m, n, &x, &y, BackwardRecursion).unwrap();
                    assert!(v <= bounded * (1.0 + 1e-12), "{name} N={n}: {v} > {bounded}");
                    assert!(v <= mixing * (1.0 + 1e-12), "{name} N={n}: {v} > {mixing}");
                }
            }
        }
    }
}

#[test]
fn alpha_examples() {
    let flat = DiscreteFk::<f64>::from_tables(vec![0.2, 0.8], vec![vec![vec![0.3, 0.7], vec![0.9, 0.1]]], vec![vec![1.0; 2]; 2]).unwrap();
    assert_eq!(alpha_constant(&flat), 1.0);
    let iid = DiscreteFk::<f64>::from_tables(vec![0.2, 0.8], vec![vec![vec![0.3, 0.7], vec![0.3, 0.7]]], vec![vec![2.0; 2]; 2]).unwrap();
    assert!((alpha_constant(&iid) - 1.0).abs() < 1e-15);
    assert!((alpha_constant(&model_a()) - 40.0 / 26.0).abs() < 1e-14);
}

#[test]
fn beta_delta_examples() {
    let iid = DiscreteFk::<f64>::from_tables(vec![0.2, 0.8], vec![vec![vec![0.3, 0.7], vec![0.3, 0.7]]], vec![vec![1.0, 2.0]; 2]).unwrap();
    assert_eq!(beta_delta_constants(&iid, 1).unwrap().beta, 1.0);
    let constant =
        DiscreteFk::<f64>::from_tables(vec![0.2, 0.8], vec![vec![vec![0.3, 0.7], vec![0.6, 0.4]]], vec![vec![2.0; 2]; 2]).unwrap();
    assert_eq!(beta_delta_constants(&constant, 1).unwrap().delta, 1.0);
    let c = beta_delta_constants(&model_a(), 1).unwrap();
    assert!((c.beta - 3.0).abs() < 1e-14 && (c.delta - 3.0).abs() < 1e-14);
    assert!(c.alpha <= c.beta * c.delta);
    assert!(beta_delta_constants(&model_a(), 0).is_err() && beta_delta_constants(&model_a(), 3).is_err());
}

#[test]
fn closed_form_needs_enumerable_horizon_only_for_subsets() {
    let m = random_model(2, 2, 24);
    let x = vec![0; 24];
    assert!(matches!(c2smc_expectation_closed_form(&m, 4, &x, &x, SubsetEnumeration), Err(Error::HorizonTooLarge { horizon: 24, .. })));
    assert!(c2smc_expectation_closed_form(&m, 4, &x, &x, BackwardRecursion).unwrap().is_finite());
    assert!(exact_target(&m).is_err());
}

proptest! {
    #[test]
    fn index_chains_partition_the_subsets(t in 1usize..=10) {
        let mut total = 0;
        for s in 1..=t + 1 {
            for c in IndexChain::enumerate(t, t + 1, s).unwrap() {
                prop_assert_eq!(c.len(), s);
                prop_assert!(c.indices.windows(2).all(|w| w[0] < w[1]));
                prop_assert_eq!(*c.indices.last().unwrap(), t + 1);
                prop_assert!(IndexChain::new(c.indices.clone(), t, t + 1).is_ok());
                total += 1;
            }
        }
        prop_assert_eq!(total, 1usize << t);
    }

    #[test]
    fn restricted_chains_start_late(t in 1usize..=8, k in 1usize..=9) {
        let k = k.min(t + 1);
        for s in 1..=t + 1 {
            for c in IndexChain::enumerate(t, k, s).unwrap() {
                prop_assert!(c.indices[0] + k > t + 1);
            }
        }
    }

    #[test]
    fn strategies_agree_on_random_models(seed in any::<u64>(), s in 2usize..=3, t in 1usize..=6, n in 2usize..=9) {
        let m = random_model(seed, s, t);
        let x: Vec<usize> = (0..t).map(|i| (seed as usize >> i) % s).collect();
        let y: Vec<usize> = (0..t).map(|i| (seed as usize >> (i + 7)) % s).collect();
        let a = c2smc_expectation_closed_form(&m, n, &x, &y, SubsetEnumeration).unwrap();
        let b = c2smc_expectation_closed_form(&m, n, &x, &y, BackwardRecursion).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn alpha_is_dominated_for_every_lag(seed in any::<u64>(), s in 2usize..=4, t in 1usize..=5) {
        let m = random_model(seed, s, t);
        for lag in 1..=t {
            let c = beta_delta_constants(&m, lag).unwrap();
            prop_assert!(c.alpha <= c.beta * c.delta);
        }
    }
}
