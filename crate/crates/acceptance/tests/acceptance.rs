//! One test per acceptance criterion. Each prints a single PASS/FAIL line.
//! Run with `cargo test -p pmcmc-lab-acceptance -- --nocapture --test-threads=1`
//! for a readable summary.

use std::time::Instant;

use pmcmc_lab::bounds::{epsilon_bounded, epsilon_mixing_value, gamma_hat_sup, linear_scaling_floor, pimh_epsilon, tuning_c_star};
use pmcmc_lab::c2smc::{
    beta_delta_constants, c2smc_expectation_bruteforce, closed_form_with, lineage_correspondence_rhs, lineage_selection_probability,
    ClosedFormStrategy, QTable,
};
use pmcmc_lab::csmc::icsmc_chain;
use pmcmc_lab::fixtures::{joint_single_step, joint_two_step, model_a, random_model, small_models, sticky_control};
use pmcmc_lab::fk_model::{exact_target, DiscreteFk};
use pmcmc_lab::harness::sticky_experiment;
use pmcmc_lab::oracle::{
    exact_asymptotic_variance, exact_minorization, exact_pn_matrix, exact_pn_matrix_lineage, spectral_summary, tv_curve, variance_under,
};
use pmcmc_lab::pgibbs::{csmc_kernels, evaluate_path_chain, evaluate_theta_chain};
use pmcmc_lab::{Streams, Trace};

fn verdict(id: u32, pass: bool, detail: String) {
    println!("[{}] criterion {id:>2}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} failed: {detail}");
}

fn all_paths(s: usize, t: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..t {
        out = out.into_iter().flat_map(|p| (0..s).map(move |z| [p.clone(), vec![z]].concat())).collect();
    }
    out
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Models whose i-cSMC kernels the suite enumerates.
fn kernel_fixtures() -> Vec<(String, DiscreteFk<f64>)> {
    small_models()
}

#[test]
fn c01_closed_form_matches_enumeration() {
    let start = Instant::now();
    let (mut worst, mut worst_strategies, mut cases) = (0.0_f64, 0.0_f64, 0usize);
    for (_, m) in small_models() {
        let q = QTable::new(&m);
        let paths = all_paths(m.num_states(), m.horizon());
        for n in [2, 3] {
            for x in &paths {
                for y in &paths {
                    let sub = closed_form_with(&q, m.horizon(), n, x, y, ClosedFormStrategy::SubsetEnumeration).unwrap();
                    let rec = closed_form_with(&q, m.horizon(), n, x, y, ClosedFormStrategy::BackwardRecursion).unwrap();
                    let bf = c2smc_expectation_bruteforce(&m, n, x, y).unwrap();
                    worst = worst.max(rel(sub, bf)).max(rel(rec, bf));
                    worst_strategies = worst_strategies.max(rel(sub, rec));
                    cases += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        worst <= 1e-10 && worst_strategies <= 1e-12 && secs < 60.0,
        format!("{cases} (model, N, x, y) cases, max rel err {worst:.2e} (strategies {worst_strategies:.2e}), {secs:.2} s"),
    );
}

#[test]
fn c02_kernels_reversible_and_positive() {
    let (mut worst_db, mut min_eig, mut count) = (0.0_f64, f64::INFINITY, 0);
    for (_, m) in kernel_fixtures() {
        for n in [2, 3] {
            let c = exact_pn_matrix(&m, n).unwrap();
            worst_db = worst_db.max(c.detailed_balance_violation());
            min_eig = min_eig.min(spectral_summary(&c).unwrap().min_eigenvalue);
            count += 1;
        }
    }
    verdict(
        2,
        worst_db <= 1e-10 && min_eig >= -1e-10,
        format!("{count} kernels, max detailed-balance violation {worst_db:.2e}, min eigenvalue {min_eig:.3e}"),
    );
}

#[test]
fn c03_minorization_tv_and_variance_bounds() {
    let slack = 1e-9;
    let (mut ok, mut count) = (true, 0);
    let mut notes = Vec::new();
    for (name, m) in kernel_fixtures() {
        for n in [2, 3] {
            let c = exact_pn_matrix(&m, n).unwrap();
            let eps = epsilon_bounded(&m, n).unwrap().epsilon;
            let exact = exact_minorization(&c);
            if exact < eps - slack {
                ok = false;
                notes.push(format!("{name} N={n}: minorization {exact} < {eps}"));
            }
            for x in 0..c.len() {
                for (k, tv) in tv_curve(&c, x, 50).into_iter().enumerate() {
                    if tv > (1.0 - eps).powi(k as i32) + slack {
                        ok = false;
                        notes.push(format!("{name} N={n}: TV at step {k} from state {x}"));
                    }
                }
            }
            let pi = c.stationary.as_slice().to_vec();
            for i in 0..c.len() {
                let f: Vec<f64> = (0..c.len()).map(|j| f64::from(u8::from(i == j))).collect();
                let v = exact_asymptotic_variance(&c, &f).unwrap();
                let vp = variance_under(&pi, &f);
                if v < vp - slack || v > (2.0 / eps - 1.0) * vp + slack {
                    ok = false;
                    notes.push(format!("{name} N={n}: variance of indicator {i}"));
                }
            }
            count += 1;
        }
    }
    verdict(
        3,
        ok,
        format!("{count} kernels: minorization, TV (n <= 50) and variance sandwich {}", if ok { "hold".into() } else { notes.join("; ") }),
    );
}

#[test]
fn c04_linear_in_horizon_scaling() {
    let mut worst_margin = f64::INFINITY;
    let mut ok = true;
    for alpha in [1.0, 1.5, 2.0] {
        for c in [1usize, 2, 5] {
            for t in 1..=50 {
                let n = c * t + 1;
                let eps = epsilon_mixing_value(alpha, n, t);
                let floor = linear_scaling_floor(alpha, c as f64);
                ok &= eps >= floor;
                worst_margin = worst_margin.min(eps - floor);
            }
        }
    }
    verdict(4, ok, format!("450 grid points, min(eps_N - exp(-(2a-1)/C)) = {worst_margin:.3e}"));
}

#[test]
fn c05_tuning_constants() {
    let t = tuning_c_star(1.0);
    verdict(
        5,
        (1.301..=1.303).contains(&t.c_star) && (0.4635..=0.4645).contains(&t.epsilon_star),
        format!("C* = {:.6}, eps* = {:.6}, W(-1/(2e)) = {:.6}", t.c_star, t.epsilon_star, t.lambert_w),
    );
}

#[test]
fn c06_potential_ratio_bounds_alpha() {
    let mut models = small_models();
    for jm in [joint_single_step(), joint_two_step()] {
        for j in 0..jm.num_thetas() {
            models.push((format!("joint_{j}"), jm.model(j).clone()));
        }
    }
    for seed in 0..10 {
        models.push((format!("random_T4_S3_{seed}"), random_model(100 + seed, 3, 4)));
    }
    let (mut ok, mut checks, mut tightest) = (true, 0, f64::INFINITY);
    for (_, m) in &models {
        for lag in 1..=m.horizon() {
            let c = beta_delta_constants(m, lag).unwrap();
            ok &= c.alpha <= c.beta * c.delta;
            tightest = tightest.min(c.beta * c.delta / c.alpha);
            checks += 1;
        }
    }
    verdict(6, ok, format!("{checks} (model, m) pairs, min beta*delta/alpha = {tightest:.4}"));
}

#[test]
fn c07_lineage_correspondence_and_lineage_invariance() {
    let fixtures = [("model_a", model_a()), ("random_T2_S2", random_model(17, 2, 2))];
    let (mut worst_identity, mut worst_kernel, mut cases) = (0.0_f64, 0.0_f64, 0);
    for (_, m) in &fixtures {
        let target = exact_target(m).unwrap();
        for n in [2, 3] {
            let lineages: Vec<Vec<usize>> = all_paths(n - 1, 2).into_iter().map(|p| p.iter().map(|i| i + 1).collect()).collect();
            for x in target.paths() {
                for y in target.paths() {
                    for i in &lineages {
                        let lhs = lineage_selection_probability(m, n, x, i, y).unwrap();
                        let rhs = lineage_correspondence_rhs(m, n, x, i, y).unwrap();
                        worst_identity = worst_identity.max((lhs - rhs).abs());
                        cases += 1;
                    }
                }
            }
            let base = exact_pn_matrix(m, n).unwrap();
            for k in all_paths(n, 2) {
                let alt = exact_pn_matrix_lineage(m, n, &k).unwrap();
                worst_kernel = worst_kernel.max((&alt.kernel - &base.kernel).abs().max());
            }
        }
    }
    verdict(
        7,
        worst_identity <= 1e-10 && worst_kernel <= 1e-12,
        format!("{cases} identity cases, max |lhs - rhs| {worst_identity:.2e}; max kernel difference over lineages {worst_kernel:.2e}"),
    );
}

#[test]
fn c08_gibbs_versus_particle_gibbs_inequalities() {
    let (mut ok, mut rows, mut notes) = (true, 0, Vec::new());
    for (name, jm) in [("single_step", joint_single_step()), ("two_step", joint_two_step())] {
        for n in [2, 3] {
            let (rep, rho) = evaluate_path_chain(&jm, &csmc_kernels(&jm, n).unwrap(), 1e-9).unwrap();
            rows += rep.rows.len();
            for f in rep.failures() {
                ok = false;
                notes.push(format!("{name} N={n} {} ({})", f.name, f.witness));
            }
            ok &= rho.rho_exact >= rho.rho_lower;
            notes.push(format!("{name} N={n} rho={:.4} >= {:.4}", rho.rho_exact, rho.rho_lower));
        }
    }
    verdict(8, ok, format!("{rows} inequality rows; {}", notes.join(", ")));
}

#[test]
fn c09_parameter_chain_identities() {
    let (mut ok, mut rows, mut notes) = (true, 0, Vec::new());
    for (name, jm) in [("single_step", joint_single_step()), ("two_step", joint_two_step())] {
        for n in [2, 3] {
            for f in [vec![1.0, 0.0], vec![0.0, 1.0], vec![-0.7, 2.5]] {
                let rep = evaluate_theta_chain(&jm, n, &f).unwrap();
                rows += rep.rows.len();
                for r in rep.failures() {
                    ok = false;
                    notes.push(format!("{name} N={n} {} lhs={} rhs={}", r.name, r.lhs, r.rhs));
                }
            }
        }
    }
    verdict(9, ok, format!("{rows} identity/bound rows incl. rho >= eps_N {}", if ok { "hold".to_string() } else { notes.join("; ") }));
}

#[test]
fn c10_sticky_sets_need_unbounded_potentials() {
    let start = Instant::now();
    let k = 16;
    let grid: Vec<usize> = (1..=k).collect();
    let rep = sticky_experiment(k, 2, &grid, 0, 0).unwrap();
    let stay: Vec<f64> = rep.rows.iter().map(|r| r.stay_probability).collect();
    let increasing = stay.windows(2).all(|w| w[1] > w[0]);
    let at_k = *stay.last().unwrap();

    let control = sticky_control(k);
    let eps = epsilon_bounded(&control, 2).unwrap().epsilon;
    let crep = pmcmc_lab::harness::sticky_rows(&control, 2, &grid, 0, 0).unwrap();
    let ctrl_max = crep.rows.iter().map(|r| r.stay_probability).fold(0.0, f64::max);
    // Minorization leaves at least eps * pi(A_n^c) escape mass from A_n.
    let target = exact_target(&control).unwrap();
    let mass =
        |n: usize| -> f64 { [[n, 2 * n], [n, 2 * n + 1]].iter().filter_map(|p| target.index_of(p)).map(|i| target.probs()[i]).sum() };
    let escape_slack = crep.rows.iter().map(|r| r.stay_probability - (1.0 - eps * (1.0 - mass(r.n)))).fold(f64::NEG_INFINITY, f64::max);
    let secs = start.elapsed().as_secs_f64();
    println!(
        "           sticky stay(n=1)={:.4} stay(n=K)={at_k:.4}; control max stay {ctrl_max:.6}, 1-eps_N={:.4}; max_n stay - (1 - eps_N pi(A_n^c)) = {escape_slack:.2e}",
        stay[0],
        1.0 - eps
    );
    verdict(
        10,
        increasing && at_k > 0.9 && ctrl_max <= 1.0 - eps && secs < 30.0,
        format!(
            "increasing={increasing}, stay(n=K)={at_k:.4} (needs > 0.9), control max stay {ctrl_max:.4} vs 1-eps_N={:.4}, {secs:.2} s",
            1.0 - eps
        ),
    );
}

#[test]
fn c11_pimh_constant_does_not_improve_with_n() {
    let m = model_a();
    let gamma = m.gamma();
    let ns: Vec<usize> = (1..=10).map(|k| 1usize << k).collect();
    let pimh: Vec<f64> = ns.iter().map(|&n| pimh_epsilon(gamma, gamma_hat_sup(&m, n).unwrap()).unwrap().epsilon).collect();
    let csmc: Vec<f64> = ns.iter().map(|&n| epsilon_bounded(&m, n).unwrap().epsilon).collect();
    let flat = pimh.iter().all(|&e| e == pimh[0]);
    let increasing = csmc.windows(2).all(|w| w[1] > w[0]);
    verdict(
        11,
        flat && increasing && csmc[csmc.len() - 1] > pimh[0],
        format!("PIMH eps = {:.6} for all N; i-cSMC eps from {:.4} (N=2) to {:.6} (N=1024)", pimh[0], csmc[0], csmc[csmc.len() - 1]),
    );
}

#[test]
fn c12_monte_carlo_agrees_with_enumeration() {
    use rayon::prelude::*;
    let draws = 1_000_000usize;
    let fixtures = [("model_a", model_a(), 2usize), ("random_T1_S3", random_model(17, 3, 1), 3)];
    let mut worst_z = 0.0_f64;
    for (fi, (_, m, n)) in fixtures.iter().enumerate() {
        let chain = exact_pn_matrix(m, *n).unwrap();
        let zs: Vec<f64> = (0..chain.len())
            .into_par_iter()
            .map(|xi| {
                let x = chain.states[xi].clone();
                let root = Streams::new(1000 + fi as u64).child(xi as u64);
                let mut counts = vec![0usize; chain.len()];
                for d in 0..draws {
                    let (y, _) = pmcmc_lab::csmc::icsmc_step::<_, f64>(m, *n, &x, &root.child(d as u64)).unwrap();
                    counts[chain.index_of(&y.points).unwrap()] += 1;
                }
                (0..chain.len())
                    .map(|yi| {
                        let p = chain.kernel[(xi, yi)];
                        let sd = (p * (1.0 - p) / draws as f64).sqrt();
                        let diff = counts[yi] as f64 / draws as f64 - p;
                        if sd > 0.0 {
                            diff.abs() / sd
                        } else if diff == 0.0 {
                            0.0
                        } else {
                            f64::INFINITY
                        }
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        worst_z = zs.into_iter().fold(worst_z, f64::max);
    }
    let csv = |seed: u64| {
        let tr: Trace = icsmc_chain(&model_a(), 4, &[0, 1], 2000, &Streams::new(seed)).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        buf
    };
    let reproducible = csv(5) == csv(5) && csv(5) != csv(6);
    verdict(
        12,
        worst_z <= 5.0 && reproducible,
        format!("max |z| over kernel entries {worst_z:.2} (10^6 draws per row); seeded traces byte-identical: {reproducible}"),
    );
}
