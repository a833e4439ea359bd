//! Closed-form ergodicity constants and their consequences for a minorized chain.

use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};
use crate::fk_model::{ess_sup_potential, DiscreteFk};
use crate::numeric::powi;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundSource {
    BoundedPotentials,
    Mixing,
    Isir,
    Pimh,
    Supplied,
}

impl fmt::Display for BoundSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::BoundedPotentials => "bounded_potentials",
            Self::Mixing => "mixing",
            Self::Isir => "isir",
            Self::Pimh => "pimh",
            Self::Supplied => "supplied",
        };
        f.write_str(s)
    }
}

/// Everything implied by a minorization `P(x, .) >= epsilon pi(.)` of a reversible kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundReport<R> {
    pub epsilon: R,
    pub tv_rate: R,
    pub variance_upper_factor: R,
    pub variance_lower_factor: R,
    /// Lower bound on both the right and the left spectral gap.
    pub gap_lower: R,
    pub dirichlet_lower: R,
    pub dirichlet_upper: R,
    pub source: BoundSource,
    pub particles: Option<usize>,
    pub horizon: Option<usize>,
}

impl<R: Real> BoundReport<R> {
    /// Packages a computed constant. A value above one signals an arithmetic bug and is an error.
    fn from_computed(epsilon: R, source: BoundSource, particles: Option<usize>, horizon: Option<usize>) -> Result<Self> {
        if epsilon > R::one() + R::tol(1e-14) {
            return Err(Error::InconsistentBound(format!("{source} epsilon = {epsilon} exceeds 1")));
        }
        let mut r = minorized_chain_bounds(epsilon)?;
        r.source = source;
        r.particles = particles;
        r.horizon = horizon;
        Ok(r)
    }

    pub const CSV_HEADER: &'static str = "source,N,T,epsilon,tv_rate,var_upper_factor,var_lower_factor";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.source,
            opt(self.particles),
            opt(self.horizon),
            self.epsilon,
            self.tv_rate,
            self.variance_upper_factor,
            self.variance_lower_factor
        )
    }
}

pub fn write_bounds_csv<R: Real, W: Write>(rows: &[BoundReport<R>], mut out: W) -> Result<()> {
    writeln!(out, "{}", BoundReport::<R>::CSV_HEADER)?;
    for r in rows {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Rate, gap, Dirichlet and variance factors for a reversible kernel minorized by `epsilon`.
pub fn minorized_chain_bounds<R: Real>(epsilon: R) -> Result<BoundReport<R>> {
    if !(epsilon > R::zero() && epsilon <= R::one()) {
        return Err(Error::EpsilonOutOfRange(epsilon.to_f64_lossy()));
    }
    let one = R::one();
    let two = R::of(2.0);
    Ok(BoundReport {
        epsilon,
        tv_rate: one - epsilon,
        variance_upper_factor: two / epsilon - one,
        variance_lower_factor: epsilon / (two - epsilon),
        gap_lower: epsilon,
        dirichlet_lower: epsilon,
        dirichlet_upper: two - epsilon,
        source: BoundSource::Supplied,
        particles: None,
        horizon: None,
    })
}

/// `epsilon_N` from the ratio `R = prod_t Gbar_t / gamma_T`.
pub fn epsilon_bounded_from_ratio<R: Real>(ratio: R, n: usize, horizon: usize) -> R {
    let nn = R::of_usize(n);
    let one = R::one();
    let keep = powi(one - one / nn, horizon);
    let coalesce = one - powi(one - R::of(2.0) / nn, horizon);
    keep / (one + coalesce * (ratio - one))
}

/// `prod_t ess sup G_t / gamma_T`, the potential ratio entering the bounded-potential constant.
pub fn potential_ratio<R: Real>(model: &DiscreteFk<R>) -> R {
    let prod = (1..=model.horizon()).map(|t| ess_sup_potential(model, t)).fold(R::one(), |a, b| a * b);
    prod / model.gamma()
}

/// The bounded-potential minorization constant for `P_N`.
pub fn epsilon_bounded<R: Real>(model: &DiscreteFk<R>, n: usize) -> Result<BoundReport<R>> {
    if n < 2 {
        return Err(Error::IndexOutOfRange("the constant needs N >= 2".into()));
    }
    let t = model.horizon();
    let eps = epsilon_bounded_from_ratio(potential_ratio(model), n, t);
    BoundReport::from_computed(eps, BoundSource::BoundedPotentials, Some(n), Some(t))
}

/// `((1 - 1/N) / (1 + 2(alpha - 1)/N))^T`.
pub fn epsilon_mixing_value<R: Real>(alpha: R, n: usize, horizon: usize) -> R {
    let nn = R::of_usize(n);
    let one = R::one();
    powi((one - one / nn) / (one + R::of(2.0) * (alpha - one) / nn), horizon)
}

pub fn epsilon_mixing<R: Real>(alpha: R, n: usize, horizon: usize) -> Result<BoundReport<R>> {
    if n < 2 || alpha < R::one() {
        return Err(Error::IndexOutOfRange("the mixing constant needs N >= 2 and alpha >= 1".into()));
    }
    BoundReport::from_computed(epsilon_mixing_value(alpha, n, horizon), BoundSource::Mixing, Some(n), Some(horizon))
}

/// `exp(-(2 alpha - 1) / C)`, the floor reached when `N - 1 = C T`.
pub fn linear_scaling_floor<R: Real>(alpha: R, c: R) -> R {
    (-(R::of(2.0) * alpha - R::one()) / c).exp()
}

/// `(N - 1) / (2 Gbar + N - 2)` for independent-proposal SIR with `Gbar = sup dpi/dM`.
pub fn epsilon_isir<R: Real>(g_bar: R, n: usize) -> Result<BoundReport<R>> {
    if n < 2 || g_bar < R::one() - R::tol(1e-12) {
        return Err(Error::IndexOutOfRange("i-SIR constant needs N >= 2 and Gbar >= 1".into()));
    }
    let nn = R::of_usize(n);
    let eps = (nn - R::one()) / (R::of(2.0) * g_bar + nn - R::of(2.0));
    BoundReport::from_computed(eps, BoundSource::Isir, Some(n), Some(1))
}

/// Principal branch of Lambert W for `x >= -1/e`, by Newton iteration from `seed`.
pub fn lambert_w0_from(x: f64, seed: f64) -> f64 {
    let mut w = seed;
    for _ in 0..200 {
        let ew = w.exp();
        let resid = w * ew - x;
        if resid.abs() < 1e-14 {
            break;
        }
        let step = resid / (ew * (w + 1.0));
        w -= step;
        if step.abs() < 1e-17 {
            break;
        }
    }
    w
}

pub fn lambert_w0(x: f64) -> f64 {
    let seed = if x > 1.0 {
        x.ln() - x.ln().ln().max(0.0)
    } else if x < -0.3 {
        -0.5
    } else {
        (-0.23_f64).max(x)
    };
    lambert_w0_from(x, seed)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TuningRule {
    pub c_star: f64,
    pub epsilon_star: f64,
    pub lambert_w: f64,
}

/// The `C` minimizing `N var(f, P_N)` along `N - 1 = C T` under the mixing bound.
pub fn tuning_c_star(alpha: f64) -> TuningRule {
    let w = lambert_w0_from(-0.5 / std::f64::consts::E, -0.23);
    let c_star = (2.0 * alpha - 1.0) / (w + 1.0);
    TuningRule { c_star, epsilon_star: (-(2.0 * alpha - 1.0) / c_star).exp(), lambert_w: w }
}

/// `gamma_T / sup gamma_hat`, the independent-proposal analogue of `epsilon_N`.
pub fn pimh_epsilon<R: Real>(gamma: R, gamma_hat_sup: R) -> Result<BoundReport<R>> {
    if gamma.is_nan() || gamma <= R::zero() || gamma_hat_sup < gamma * (R::one() - R::tol(1e-12)) {
        return Err(Error::InconsistentBound(format!("sup gamma_hat {gamma_hat_sup} below gamma_T {gamma}")));
    }
    BoundReport::from_computed((gamma / gamma_hat_sup).min(R::one()), BoundSource::Pimh, None, None)
}

pub const SUP_STATE_LIMIT: usize = 12;

/// Largest `gamma_hat` over particle configurations reachable by standard SMC.
///
/// The estimator factorizes over time given the particle supports `U_t`, and
/// feasibility only constrains consecutive supports (`U_t` must be reachable
/// from states of `U_{t-1}` with positive potential). For a fixed support the
/// best time-`t` mean puts every spare particle on the heaviest state of `U_t`.
pub fn gamma_hat_sup<R: Real>(model: &DiscreteFk<R>, n: usize) -> Result<R> {
    let s = model.num_states();
    if s > SUP_STATE_LIMIT {
        return Err(Error::StateSpaceTooLarge { size: s, limit: SUP_STATE_LIMIT });
    }
    let full = 1usize << s;
    let best_mean = |g: &[R], mask: usize| -> Option<R> {
        let size = mask.count_ones() as usize;
        if mask == 0 || size > n {
            return None;
        }
        let (mut sum, mut top) = (R::zero(), R::zero());
        for (z, &gz) in g.iter().enumerate() {
            if mask >> z & 1 == 1 {
                sum += gz;
                top = top.max(gz);
            }
        }
        Some((sum + R::of_usize(n - size) * top) / R::of_usize(n))
    };
    let support1: usize = (0..s).filter(|&z| model.m1()[z] > R::zero()).map(|z| 1 << z).sum();
    let mut value: Vec<Option<R>> = vec![None; full];
    for (mask, v) in value.iter_mut().enumerate() {
        if mask & !support1 == 0 {
            *v = best_mean(model.potential(1), mask);
        }
    }
    for t in 2..=model.horizon() {
        let g_prev = model.potential(t - 1);
        let mt = model.transition(t);
        let succ: Vec<usize> = (0..s)
            .map(|z| if g_prev[z] > R::zero() { (0..s).filter(|&u| mt[z][u] > R::zero()).map(|u| 1 << u).sum() } else { 0 })
            .collect();
        // best[r]: largest value among supports whose reachable set is exactly r.
        let mut best: Vec<Option<R>> = vec![None; full];
        for (mask, v) in value.iter().enumerate() {
            if let Some(v) = *v {
                let reach: usize = (0..s).filter(|&z| mask >> z & 1 == 1).map(|z| succ[z]).fold(0, |a, b| a | b);
                best[reach] = Some(best[reach].map_or(v, |b: R| b.max(v)));
            }
        }
        // Superset maximum: sup_best[u] = max over r containing u.
        for bit in 0..s {
            for mask in 0..full {
                if mask >> bit & 1 == 0 {
                    if let Some(v) = best[mask | 1 << bit] {
                        best[mask] = Some(best[mask].map_or(v, |b| b.max(v)));
                    }
                }
            }
        }
        let g_t = model.potential(t);
        value = (0..full)
            .map(|mask| match (best[mask], best_mean(g_t, mask)) {
                (Some(prev), Some(cur)) => Some(prev * cur),
                _ => None,
            })
            .collect();
    }
    value.into_iter().flatten().fold(None, |acc: Option<R>, v| Some(acc.map_or(v, |a| a.max(v)))).ok_or(Error::ZeroNormalizingConstant)
}
