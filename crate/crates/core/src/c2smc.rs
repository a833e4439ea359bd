//! Doubly conditional SMC: two pinned paths, the exact expectation of
//! `gamma_hat` under it, and the mixing constants that bound it.

use crate::enumerate::{for_each_outcome, outcome_gamma_hat, terminal_weights, trace_lineage, PinSpec};
use crate::error::{Error, Result};
use crate::fk_model::{exact_target, DiscreteFk, FeynmanKacModel};
use crate::numeric::{powi, KahanSum};
use crate::rng::Streams;
use crate::scalar::Real;
use crate::smc::{run_pinned, ParticleSystem, Pin};

/// cSMC with `x` pinned along the zero lineage and `y` pinned along `k` (0-based).
pub fn run_c2smc<M: FeynmanKacModel<R>, R: Real>(
    model: &M,
    n: usize,
    x: &[M::State],
    k: &[usize],
    y: &[M::State],
    streams: &Streams,
) -> Result<ParticleSystem<M::State, R>> {
    let t_max = model.horizon();
    if x.len() != t_max || y.len() != t_max || k.len() != t_max {
        return Err(Error::DimensionMismatch("x, k and y need T entries".into()));
    }
    if n < 2 || k.iter().any(|&i| i >= n) {
        return Err(Error::IndexOutOfRange(format!("need N >= 2 and lineage entries in 0..{n}")));
    }
    for t in 0..t_max {
        let parent_clash = t > 0 && k[t] == 0 && k[t - 1] != 0;
        if k[t] == 0 && (x[t] != y[t] || parent_clash) {
            return Err(Error::LineageClash { time: t + 1 });
        }
        for z in [&x[t], &y[t]] {
            if model.log_potential(t, z) == R::neg_infinity() {
                return Err(Error::PinnedPathZeroPotential { time: t + 1 });
            }
        }
    }
    let zeros = vec![0; t_max];
    let pins = [Pin { path: x, lineage: &zeros }, Pin { path: y, lineage: k }];
    run_pinned(model, n, &pins, streams)
}

/// All `G_{p,q}` for `0 <= p < q <= T+1`.
#[derive(Clone, Debug)]
pub struct QTable<R> {
    vals: Vec<Vec<Vec<R>>>,
}

impl<R: Real> QTable<R> {
    pub fn new(model: &DiscreteFk<R>) -> Self {
        let t = model.horizon();
        let vals = (0..=t)
            .map(|p| (0..=t + 1).map(|q| if q > p { model.q_operator(p, q).expect("valid range") } else { Vec::new() }).collect())
            .collect();
        Self { vals }
    }

    /// `G_{p,q}(z)`; for `p = 0` the value is the scalar `G_{0,q}` for every `z`.
    pub fn get(&self, p: usize, q: usize, z: usize) -> R {
        self.vals[p][q][z]
    }
}

/// Increasing indices `i_1 < ... < i_s = T+1` with `i_1 > T - k + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexChain {
    pub indices: Vec<usize>,
}

pub const SUBSET_HORIZON_LIMIT: usize = 20;

impl IndexChain {
    pub fn new(indices: Vec<usize>, horizon: usize, k: usize) -> Result<Self> {
        let ok = !indices.is_empty()
            && indices.windows(2).all(|w| w[0] < w[1])
            && *indices.last().unwrap() == horizon + 1
            && indices[0] + k > horizon + 1;
        if !ok {
            return Err(Error::IndexOutOfRange(format!("{indices:?} is not an index chain for T={horizon}, k={k}")));
        }
        Ok(Self { indices })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Every chain of length `s` with `i_1 > T - k + 1`, via subsets of the non-terminal indices.
    pub fn enumerate(horizon: usize, k: usize, s: usize) -> Result<Vec<Self>> {
        if horizon > SUBSET_HORIZON_LIMIT {
            return Err(Error::HorizonTooLarge { horizon, limit: SUBSET_HORIZON_LIMIT });
        }
        let lo = (horizon + 2).saturating_sub(k).max(1);
        let mut out = Vec::new();
        for mask in 0u32..(1u32 << horizon) {
            if mask.count_ones() as usize + 1 != s {
                continue;
            }
            let mut idx: Vec<usize> = (0..horizon).filter(|b| mask >> b & 1 == 1).map(|b| b + 1).collect();
            if idx.first().is_some_and(|&i| i < lo) {
                continue;
            }
            idx.push(horizon + 1);
            out.push(Self { indices: idx });
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClosedFormStrategy {
    /// Sum over index chains, `O(2^T T)`.
    SubsetEnumeration,
    /// Backward recursion over the first chain index, `O(T^2)`.
    BackwardRecursion,
}

/// Exact `E_{1,x,2,y}[gamma_hat]` from the chain-sum formula.
pub fn c2smc_expectation_closed_form<R: Real>(
    model: &DiscreteFk<R>,
    n: usize,
    x: &[usize],
    y: &[usize],
    strategy: ClosedFormStrategy,
) -> Result<R> {
    let q = QTable::new(model);
    closed_form_with(&q, model.horizon(), n, x, y, strategy)
}

pub fn closed_form_with<R: Real>(
    q: &QTable<R>,
    horizon: usize,
    n: usize,
    x: &[usize],
    y: &[usize],
    strategy: ClosedFormStrategy,
) -> Result<R> {
    if n < 2 {
        return Err(Error::IndexOutOfRange("doubly conditional SMC needs N >= 2".into()));
    }
    let free = R::of_usize(n - 2);
    // Bracket for consecutive chain indices p < q, p >= 1.
    let pair = |p: usize, r: usize| q.get(p, r, x[p - 1]) + q.get(p, r, y[p - 1]);
    let total = match strategy {
        ClosedFormStrategy::SubsetEnumeration => {
            let mut acc = KahanSum::new();
            for s in 1..=horizon + 1 {
                let weight = powi(free, horizon + 1 - s);
                if weight == R::zero() {
                    continue;
                }
                for chain in IndexChain::enumerate(horizon, horizon + 1, s)? {
                    let ix = &chain.indices;
                    let mut term = q.get(0, ix[0], 0);
                    for w in ix.windows(2) {
                        term *= pair(w[0], w[1]);
                    }
                    acc.add(weight * term);
                }
            }
            acc.value()
        }
        ClosedFormStrategy::BackwardRecursion => {
            // f[p] sums the chain tails starting at p, gaps weighted by (N-2)^(gap).
            let mut f = vec![R::zero(); horizon + 2];
            f[horizon + 1] = R::one();
            for p in (1..=horizon).rev() {
                f[p] = (p + 1..=horizon + 1).fold(R::zero(), |acc, r| acc + pair(p, r) * powi(free, r - p - 1) * f[r]);
            }
            (1..=horizon + 1).map(|i1| q.get(0, i1, 0) * powi(free, i1 - 1) * f[i1]).sum()
        }
    };
    Ok(total / powi(R::of_usize(n), horizon))
}

/// Exact `E_{1,x,k,y}[h(gamma_hat)]` by enumerating every free particle.
pub fn c2smc_functional_bruteforce<R: Real, H: Fn(R) -> R>(
    model: &DiscreteFk<R>,
    n: usize,
    x: &[usize],
    k: &[usize],
    y: &[usize],
    h: H,
) -> Result<R> {
    if n < 2 {
        return Err(Error::IndexOutOfRange("doubly conditional SMC needs N >= 2".into()));
    }
    let zeros = vec![0; model.horizon()];
    let pins = [PinSpec { path: x, lineage: &zeros }, PinSpec { path: y, lineage: k }];
    let mut acc = KahanSum::new();
    for_each_outcome(model, n, &pins, |states, _, p| acc.add(p * h(outcome_gamma_hat(model, states))))?;
    Ok(acc.value())
}

/// Exact `E_{1,x,2,y}[gamma_hat]` by enumeration.
pub fn c2smc_expectation_bruteforce<R: Real>(model: &DiscreteFk<R>, n: usize, x: &[usize], y: &[usize]) -> Result<R> {
    c2smc_functional_bruteforce(model, n, x, &vec![1; model.horizon()], y, |g| g)
}

/// Probability under cSMC from `x` that the selected terminal particle has lineage
/// exactly `i` and path `y`.
pub fn lineage_selection_probability<R: Real>(model: &DiscreteFk<R>, n: usize, x: &[usize], i: &[usize], y: &[usize]) -> Result<R> {
    let t_max = model.horizon();
    let zeros = vec![0; t_max];
    let mut acc = KahanSum::new();
    let mut lin = vec![0; t_max];
    let last = i[t_max - 1];
    for_each_outcome(model, n, &[PinSpec { path: x, lineage: &zeros }], |states, ancestors, p| {
        trace_lineage(ancestors, last, &mut lin);
        if lin != i || (0..t_max).any(|t| states[t][lin[t]] != y[t]) {
            return;
        }
        acc.add(p * terminal_weights(model, &states[t_max - 1])[last]);
    })?;
    Ok(acc.value())
}

/// Right-hand side of the lineage correspondence:
/// `(gamma_T / N^T) pi(y) E_{1,x,i,y}[1 / gamma_hat]`.
pub fn lineage_correspondence_rhs<R: Real>(model: &DiscreteFk<R>, n: usize, x: &[usize], i: &[usize], y: &[usize]) -> Result<R> {
    let target = exact_target(model)?;
    let inv = c2smc_functional_bruteforce(model, n, x, i, y, |g| R::one() / g)?;
    Ok(target.gamma() / powi(R::of_usize(n), model.horizon()) * target.prob(y) * inv)
}

/// `max_{1 <= p < q <= T+1} max_z G_{p,q}(z) / eta_p(G_{p,q})`.
pub fn alpha_constant<R: Real>(model: &DiscreteFk<R>) -> R {
    let t = model.horizon();
    let mut alpha = R::one();
    for p in 1..=t {
        let eta = model.eta(p).expect("p in range");
        for q in p + 1..=t + 1 {
            let g = model.q_operator(p, q).expect("p < q in range");
            let mean: R = eta.iter().zip(&g).map(|(&a, &b)| a * b).sum();
            let top = g.iter().copied().fold(R::zero(), R::max);
            alpha = alpha.max(top / mean);
        }
    }
    alpha
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixingConstants<R> {
    pub alpha: R,
    pub beta: R,
    pub delta: R,
    pub m: usize,
}

/// `m`-step transition `M_{p+1} ... M_{p+m}` (1-based `p`).
fn m_step<R: Real>(model: &DiscreteFk<R>, p: usize, m: usize) -> Vec<Vec<R>> {
    let s = model.num_states();
    let mut acc: Vec<Vec<R>> = (0..s).map(|i| (0..s).map(|j| if i == j { R::one() } else { R::zero() }).collect()).collect();
    for t in p + 1..=p + m {
        let mt = model.transition(t);
        acc = acc.iter().map(|row| (0..s).map(|j| row.iter().zip(mt).map(|(&a, r)| a * r[j]).sum()).collect()).collect();
    }
    acc
}

/// Ratio constants for lag `m`: `beta` bounds `m`-step transition ratios and
/// `delta` is the `m`-th power of the largest potential ratio.
///
/// Over a finite space a ratio of sums `sum_A a / sum_A b` never exceeds the
/// largest singleton ratio, so `beta` only needs single target states.
pub fn beta_delta_constants<R: Real>(model: &DiscreteFk<R>, m: usize) -> Result<MixingConstants<R>> {
    let t = model.horizon();
    if m == 0 || m > t {
        return Err(Error::IndexOutOfRange(format!("lag m must lie in 1..={t}")));
    }
    let mut ratio = R::one();
    for p in 1..=t {
        let g = model.potential(p);
        let lo = g.iter().copied().fold(R::infinity(), R::min);
        if lo <= R::zero() {
            return Err(Error::ZeroPotential);
        }
        ratio = ratio.max(g.iter().copied().fold(R::zero(), R::max) / lo);
    }
    let mut beta = R::one();
    for p in 1..=t.saturating_sub(m) {
        let mbar = m_step(model, p, m);
        for u in 0..model.num_states() {
            let col: Vec<R> = mbar.iter().map(|r| r[u]).collect();
            let hi = col.iter().copied().fold(R::zero(), R::max);
            if hi <= R::zero() {
                continue;
            }
            let lo = col.iter().copied().fold(R::infinity(), R::min);
            if lo <= R::zero() {
                return Err(Error::ZeroTransitionOverlap);
            }
            beta = beta.max(hi / lo);
        }
    }
    Ok(MixingConstants { alpha: alpha_constant(model), beta, delta: powi(ratio, m), m })
}
