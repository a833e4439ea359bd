//! Exact i-cSMC kernels on small models and analysis of finite Markov chains.
//!
//! Chains are stored in the model's scalar type; eigen-solves and linear
//! solves run in `f64`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::enumerate::{for_each_outcome, outcome_bound, terminal_weights, trace_lineage, PinSpec, OUTCOME_LIMIT};
use crate::error::{Error, Result};
use crate::fk_model::{exact_target, DiscreteFk, TargetLaw};
use crate::numeric::KahanSum;
use crate::scalar::Real;
use crate::smc::compositions;

const REVERSIBILITY_TOL: f64 = 1e-9;

/// An exactly known Markov kernel on `K` labelled states with its stationary law.
#[derive(Clone, Debug)]
pub struct FiniteChain<R: Real = f64> {
    pub states: Vec<Vec<usize>>,
    pub kernel: DMatrix<R>,
    pub stationary: DVector<R>,
}

impl<R: Real> FiniteChain<R> {
    /// Validates row sums (1e-10) and stationarity (1e-9).
    pub fn new(states: Vec<Vec<usize>>, kernel: DMatrix<R>, stationary: DVector<R>) -> Result<Self> {
        let k = states.len();
        if kernel.nrows() != k || kernel.ncols() != k || stationary.len() != k {
            return Err(Error::DimensionMismatch(format!("{k} states but kernel is {}x{}", kernel.nrows(), kernel.ncols())));
        }
        for r in 0..k {
            let sum: R = kernel.row(r).iter().copied().sum();
            if (sum - R::one()).abs() > R::tol(1e-10) {
                return Err(Error::NonStochasticRow { table: "kernel".into(), row: r, sum: sum.to_f64_lossy() });
            }
        }
        let chain = Self { states, kernel, stationary };
        let drift = chain.stationarity_error();
        if drift > R::tol(1e-9) {
            return Err(Error::InconsistentBound(format!("stationary vector moved by {drift} under the kernel")));
        }
        Ok(chain)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, state: &[usize]) -> Option<usize> {
        self.states.iter().position(|s| s == state)
    }

    /// `max_j |(pi P)_j - pi_j|`.
    pub fn stationarity_error(&self) -> R {
        let moved = self.kernel.tr_mul(&self.stationary);
        (moved - &self.stationary).iter().fold(R::zero(), |m, &v| m.max(v.abs()))
    }

    /// `max_{i,j} |pi_i P_ij - pi_j P_ji|`.
    pub fn detailed_balance_violation(&self) -> R {
        let k = self.len();
        let mut worst = R::zero();
        for i in 0..k {
            for j in i + 1..k {
                let a = self.stationary[i] * self.kernel[(i, j)];
                let b = self.stationary[j] * self.kernel[(j, i)];
                worst = worst.max((a - b).abs());
            }
        }
        worst
    }

    fn to_f64(&self) -> (DMatrix<f64>, DVector<f64>) {
        (self.kernel.map(|v| v.to_f64_lossy()), self.stationary.map(|v| v.to_f64_lossy()))
    }
}

/// Exact `P_N(x, .)` for one reference path, over the support of `pi`.
pub fn exact_pn_row<R: Real>(model: &DiscreteFk<R>, target: &TargetLaw<R>, n: usize, x: &[usize], k: &[usize]) -> Result<Vec<R>> {
    let mut acc = vec![KahanSum::<R>::new(); target.len()];
    let mut lineage = vec![0; model.horizon()];
    let mut missing = false;
    let pin = [PinSpec { path: x, lineage: k }];
    for_each_outcome(model, n, &pin, |states, ancestors, prob| {
        let w = terminal_weights(model, &states[states.len() - 1]);
        for (l, &wl) in w.iter().enumerate() {
            if wl <= R::zero() {
                continue;
            }
            trace_lineage(ancestors, l, &mut lineage);
            let path: Vec<usize> = lineage.iter().enumerate().map(|(t, &i)| states[t][i]).collect();
            match target.index_of(&path) {
                Some(idx) => acc[idx].add(prob * wl),
                None => missing = true,
            }
        }
    })?;
    if missing {
        return Err(Error::InconsistentBound("selected a path outside the target support".into()));
    }
    Ok(acc.iter().map(|a| a.value()).collect())
}

/// The i-cSMC kernel `P_N` on the support of `pi`, pinned lineage all zeros.
pub fn exact_pn_matrix<R: Real>(model: &DiscreteFk<R>, n: usize) -> Result<FiniteChain<R>> {
    exact_pn_matrix_lineage(model, n, &vec![0; model.horizon()])
}

/// The kernel obtained by pinning the reference along lineage `k` instead.
pub fn exact_pn_matrix_lineage<R: Real>(model: &DiscreteFk<R>, n: usize, k: &[usize]) -> Result<FiniteChain<R>> {
    let target = exact_target(model)?;
    exact_pn_matrix_with(model, &target, n, k)
}

/// Enumerates particle configurations when that is feasible; with the reference on
/// lineage zero and too many configurations, falls back to occupancy counting.
pub fn exact_pn_matrix_with<R: Real>(model: &DiscreteFk<R>, target: &TargetLaw<R>, n: usize, k: &[usize]) -> Result<FiniteChain<R>> {
    let pin = [PinSpec { path: &target.paths()[0], lineage: k }];
    if k.iter().all(|&i| i == 0) && outcome_bound(model, n, &pin) > OUTCOME_LIMIT {
        return occupancy_pn_matrix_with(model, target, n);
    }
    let rows: Vec<Vec<R>> = target.paths().par_iter().map(|x| exact_pn_row(model, target, n, x, k)).collect::<Result<_>>()?;
    chain_from_rows(target, rows)
}

fn chain_from_rows<R: Real>(target: &TargetLaw<R>, rows: Vec<Vec<R>>) -> Result<FiniteChain<R>> {
    let kk = target.len();
    let kernel = DMatrix::from_fn(kk, kk, |i, j| rows[i][j]);
    let stationary = DVector::from_column_slice(target.probs());
    FiniteChain::new(target.paths().to_vec(), kernel, stationary)
}

/// Work limit (layer size squared, times horizon and kernel entries) for occupancy counting.
pub const OCCUPANCY_LIMIT: f64 = 2e10;

/// `P_N` by occupancy counting; see [`occupancy_pn_row`].
pub fn occupancy_pn_matrix<R: Real>(model: &DiscreteFk<R>, n: usize) -> Result<FiniteChain<R>> {
    let target = exact_target(model)?;
    occupancy_pn_matrix_with(model, &target, n)
}

fn occupancy_pn_matrix_with<R: Real>(model: &DiscreteFk<R>, target: &TargetLaw<R>, n: usize) -> Result<FiniteChain<R>> {
    let occ = Occupancy::new(model, target, n)?;
    let rows: Vec<Vec<R>> = target.paths().par_iter().map(|x| occ.row(model, target, x)).collect();
    chain_from_rows(target, rows)
}

/// Exact `P_N(x, .)` without labelling particles.
///
/// Free particles are exchangeable, so for a candidate output `y` a pass is
/// summarized at each time by how many free particles sit in each state with an
/// ancestry other than `y_{1:t}`, plus how many trace back exactly along
/// `y_{1:t}`. Given that summary the next generation is multinomial over these
/// `S + 1` classes, and the selected path is `y` with probability proportional
/// to the terminal weight of the `y`-tracing particles.
pub fn occupancy_pn_row<R: Real>(model: &DiscreteFk<R>, target: &TargetLaw<R>, n: usize, x: &[usize]) -> Result<Vec<R>> {
    Ok(Occupancy::new(model, target, n)?.row(model, target, x))
}

struct Occupancy {
    free: usize,
    comps: Vec<Vec<usize>>,
    ln_fact: Vec<f64>,
}

impl Occupancy {
    fn new<R: Real>(model: &DiscreteFk<R>, target: &TargetLaw<R>, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::IndexOutOfRange("need at least one particle".into()));
        }
        let free = n - 1;
        let comps = compositions(free, model.num_states() + 1);
        let c = comps.len() as f64;
        let k = target.len() as f64;
        let work = c * c * model.horizon() as f64 * k * k;
        if work > OCCUPANCY_LIMIT {
            return Err(Error::OutcomeSpaceTooLarge { size: work, limit: OCCUPANCY_LIMIT });
        }
        let ln_fact = (0..=free).scan(0.0, |acc, i| {
            if i > 0 {
                *acc += (i as f64).ln();
            }
            Some(*acc)
        });
        Ok(Self { free, comps, ln_fact: ln_fact.collect() })
    }

    fn multinomial<R: Real>(&self, cells: &[R], c: &[usize]) -> R {
        let mut lp = self.ln_fact[self.free];
        let mut prod = R::one();
        for (&ci, &p) in c.iter().zip(cells) {
            if ci > 0 {
                if p <= R::zero() {
                    return R::zero();
                }
                lp -= self.ln_fact[ci];
                prod *= p.powi(ci as i32);
            }
        }
        R::of(lp.exp()) * prod
    }

    fn row<R: Real>(&self, model: &DiscreteFk<R>, target: &TargetLaw<R>, x: &[usize]) -> Vec<R> {
        target.paths().iter().map(|y| self.transition(model, x, y)).collect()
    }

    fn transition<R: Real>(&self, model: &DiscreteFk<R>, x: &[usize], y: &[usize]) -> R {
        if self.free == 0 {
            return if x == y { R::one() } else { R::zero() };
        }
        let s = model.num_states();
        let t_max = model.horizon();
        let mut cells = vec![R::zero(); s + 1];
        for (z, c) in cells.iter_mut().take(s).enumerate() {
            *c = if z == y[0] { R::zero() } else { model.m1()[z] };
        }
        cells[s] = model.m1()[y[0]];
        let mut layer: HashMap<Vec<usize>, R> = HashMap::new();
        for c in &self.comps {
            let p = self.multinomial(&cells, c);
            if p > R::zero() {
                layer.insert(c.clone(), p);
            }
        }
        let mut prefix = x[0] == y[0];
        for t in 1..t_max {
            let g = model.potential(t);
            let mt = model.transition(t + 1);
            let (yp, yc) = (y[t - 1], y[t]);
            let mut next: HashMap<Vec<usize>, R> = HashMap::new();
            for (c, p) in layer {
                let pinned_w = g[x[t - 1]];
                let mut match_w = R::of_usize(c[s]) * g[yp];
                let mut total = match_w + pinned_w;
                let mut other = vec![R::zero(); s];
                if prefix {
                    match_w += pinned_w;
                } else {
                    for (u, o) in other.iter_mut().enumerate() {
                        *o += pinned_w * mt[x[t - 1]][u];
                    }
                }
                for z in 0..s {
                    if c[z] > 0 {
                        let w = R::of_usize(c[z]) * g[z];
                        total += w;
                        for (u, o) in other.iter_mut().enumerate() {
                            *o += w * mt[z][u];
                        }
                    }
                }
                for u in 0..s {
                    let via_match = if u == yc { R::zero() } else { match_w * mt[yp][u] };
                    cells[u] = (other[u] + via_match) / total;
                }
                cells[s] = match_w * mt[yp][yc] / total;
                for c2 in &self.comps {
                    let q = self.multinomial(&cells, c2);
                    if q > R::zero() {
                        *next.entry(c2.clone()).or_insert(R::zero()) += p * q;
                    }
                }
            }
            layer = next;
            prefix = prefix && x[t] == y[t];
        }
        let g = model.potential(t_max);
        let mut acc = KahanSum::new();
        for (c, p) in layer {
            let pinned = g[x[t_max - 1]];
            let matched = R::of_usize(c[s]) * g[y[t_max - 1]] + if prefix { pinned } else { R::zero() };
            let total = pinned + R::of_usize(c[s]) * g[y[t_max - 1]] + (0..s).map(|z| R::of_usize(c[z]) * g[z]).sum::<R>();
            acc.add(p * matched / total);
        }
        acc.value()
    }
}

/// `||delta_{x0} P^n - pi||_TV` for `n = 0..=n_max`.
pub fn tv_curve<R: Real>(chain: &FiniteChain<R>, x0: usize, n_max: usize) -> Vec<R> {
    let k = chain.len();
    let mut mu = DVector::<R>::from_element(k, R::zero());
    mu[x0] = R::one();
    let mut out = Vec::with_capacity(n_max + 1);
    for step in 0..=n_max {
        if step > 0 {
            mu = chain.kernel.tr_mul(&mu);
        }
        let tv = (0..k).map(|j| (mu[j] - chain.stationary[j]).abs()).sum::<R>() * R::of(0.5);
        out.push(tv);
    }
    out
}

/// `nu P^n` for `n = 0..=n_max`.
pub fn propagate<R: Real>(chain: &FiniteChain<R>, nu: &[R], n_max: usize) -> Vec<Vec<R>> {
    let mut mu = DVector::from_column_slice(nu);
    let mut out = vec![nu.to_vec()];
    for _ in 0..n_max {
        mu = chain.kernel.tr_mul(&mu);
        out.push(mu.iter().copied().collect());
    }
    out
}

/// `||nu - pi||_{L^2(pi)}` for `nu` absolutely continuous w.r.t. `pi`.
pub fn l2_distance<R: Real>(nu: &[R], pi: &[R]) -> R {
    nu.iter()
        .zip(pi)
        .filter(|(_, &p)| p > R::zero())
        .map(|(&v, &p)| {
            let r = v / p - R::one();
            r * r * p
        })
        .sum::<R>()
        .sqrt()
}

pub fn mean_under<R: Real>(pi: &[R], f: &[R]) -> R {
    pi.iter().zip(f).map(|(&p, &v)| p * v).sum()
}

pub fn variance_under<R: Real>(pi: &[R], f: &[R]) -> R {
    let m = mean_under(pi, f);
    pi.iter().zip(f).map(|(&p, &v)| p * (v - m) * (v - m)).sum()
}

/// `<f, g>_pi`.
pub fn inner<R: Real>(pi: &[R], f: &[R], g: &[R]) -> R {
    pi.iter().zip(f).zip(g).map(|((&p, &a), &b)| p * a * b).sum()
}

/// Dirichlet form `<f, (I - P) f>_pi`.
pub fn dirichlet_form<R: Real>(chain: &FiniteChain<R>, f: &[R]) -> R {
    let fv = DVector::from_column_slice(f);
    let pf = &chain.kernel * &fv;
    let pi = chain.stationary.as_slice();
    inner(pi, f, f) - inner(pi, f, pf.as_slice())
}

/// `min_{x,y} P(x, {y}) / pi({y})` over states with positive stationary mass.
pub fn exact_minorization<R: Real>(chain: &FiniteChain<R>) -> R {
    let k = chain.len();
    let mut best = R::infinity();
    for j in 0..k {
        let pj = chain.stationary[j];
        if pj <= R::zero() {
            continue;
        }
        for i in 0..k {
            best = best.min(chain.kernel[(i, j)] / pj);
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralSummary {
    /// `1 - lambda_2`, the right spectral gap.
    pub gap_right: f64,
    /// `Gap_L = 2 - sup E(f)/var(f) = 1 + lambda_min`.
    pub gap_left: f64,
    /// Largest eigenvalue on the mean-zero subspace.
    pub lambda_2: f64,
    pub min_eigenvalue: f64,
    pub is_positive: bool,
}

/// Orthonormal basis of the complement of `u` (unit vector), via one Householder reflection.
fn complement_basis(u: &DVector<f64>) -> DMatrix<f64> {
    let k = u.len();
    let mut v = u.clone();
    let s = if v[0] >= 0.0 { 1.0 } else { -1.0 };
    v[0] += s;
    let vv = v.dot(&v);
    let h = DMatrix::<f64>::identity(k, k) - (&v * v.transpose()) * (2.0 / vv);
    h.columns(1, k - 1).into_owned()
}

/// The symmetrized kernel `D^{1/2} P D^{-1/2}` restricted to the complement of `sqrt(pi)`,
/// with the basis used for the restriction.
fn restricted_symmetric(p: &DMatrix<f64>, pi: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = pi.len();
    let sq = pi.map(f64::sqrt);
    let a = DMatrix::from_fn(k, k, |i, j| sq[i] * p[(i, j)] / sq[j]);
    let a = (&a + a.transpose()) * 0.5;
    let q = complement_basis(&sq);
    (q.transpose() * a * &q, q)
}

fn require_reversible<R: Real>(chain: &FiniteChain<R>) -> Result<()> {
    let v = chain.detailed_balance_violation().to_f64_lossy();
    if v > REVERSIBILITY_TOL {
        return Err(Error::NotReversible { violation: v });
    }
    if chain.stationary.iter().any(|&p| p <= R::zero()) {
        return Err(Error::InconsistentBound("stationary law must be positive on every state".into()));
    }
    Ok(())
}

pub fn spectral_summary<R: Real>(chain: &FiniteChain<R>) -> Result<SpectralSummary> {
    require_reversible(chain)?;
    if chain.len() == 1 {
        return Ok(SpectralSummary { gap_right: 1.0, gap_left: 1.0, lambda_2: 0.0, min_eigenvalue: 1.0, is_positive: true });
    }
    let (p, pi) = chain.to_f64();
    let (b, _) = restricted_symmetric(&p, &pi);
    let eig = b.symmetric_eigenvalues();
    let lambda_2 = eig.max();
    let lambda_min = eig.min();
    Ok(SpectralSummary {
        gap_right: 1.0 - lambda_2,
        gap_left: 1.0 + lambda_min,
        lambda_2,
        min_eigenvalue: lambda_min.min(1.0),
        is_positive: lambda_min >= -1e-10,
    })
}

/// `var(f, P) = <fbar, fbar>_pi + 2 <fbar, P (I - P)^{-1} fbar>_pi` for a reversible chain.
pub fn exact_asymptotic_variance<R: Real>(chain: &FiniteChain<R>, f: &[R]) -> Result<R> {
    require_reversible(chain)?;
    if chain.len() == 1 {
        return Ok(R::zero());
    }
    let (p, pi) = chain.to_f64();
    let fv: Vec<f64> = f.iter().map(|v| v.to_f64_lossy()).collect();
    let m = mean_under(pi.as_slice(), &fv);
    let g = DVector::from_fn(pi.len(), |i, _| pi[i].sqrt() * (fv[i] - m));
    let (b, q) = restricted_symmetric(&p, &pi);
    let c = q.transpose() * g;
    let eig = b.symmetric_eigen();
    let mut var = 0.0;
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let coef = eig.eigenvectors.column(j).dot(&c);
        if coef * coef < 1e-300 {
            continue;
        }
        if 1.0 - lam < 1e-13 {
            return Err(Error::SingularSolve);
        }
        var += coef * coef * (1.0 + lam) / (1.0 - lam);
    }
    Ok(R::of(var))
}

/// Asymptotic variance for any ergodic chain via the fundamental matrix
/// `Z = (I - P + 1 pi^T)^{-1}`: `var = 2 <fbar, Z fbar>_pi - <fbar, fbar>_pi`.
pub fn asymptotic_variance_general<R: Real>(chain: &FiniteChain<R>, f: &[R]) -> Result<R> {
    let (p, pi) = chain.to_f64();
    let k = pi.len();
    let fv: Vec<f64> = f.iter().map(|v| v.to_f64_lossy()).collect();
    let m = mean_under(pi.as_slice(), &fv);
    let fbar = DVector::from_fn(k, |i, _| fv[i] - m);
    let sys = DMatrix::<f64>::identity(k, k) - p + DMatrix::from_fn(k, k, |_, j| pi[j]);
    let z = sys.lu().solve(&fbar).ok_or(Error::SingularSolve)?;
    let pis = pi.as_slice();
    Ok(R::of(2.0 * inner(pis, fbar.as_slice(), z.as_slice()) - inner(pis, fbar.as_slice(), fbar.as_slice())))
}

/// The kernel whose every row is the stationary law (exact sampling).
pub fn iid_chain<R: Real>(states: Vec<Vec<usize>>, pi: &[R]) -> Result<FiniteChain<R>> {
    let k = pi.len();
    FiniteChain::new(states, DMatrix::from_fn(k, k, |_, j| pi[j]), DVector::from_column_slice(pi))
}
