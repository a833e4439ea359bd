//! Exhaustive enumeration of conditional particle passes on finite models.
//!
//! Free particles are visited in (time, index, ancestor, state) order; every
//! branch carries its exact probability. Outcomes stop before the terminal
//! selection, which callers apply through [`terminal_weights`].

use crate::error::{Error, Result};
use crate::fk_model::DiscreteFk;
use crate::scalar::Real;

pub const OUTCOME_LIMIT: f64 = 1e7;

/// A pinned particle: `path[t]` sits at particle `lineage[t]` (0-based), whose
/// time-`t` parent is `lineage[t-1]`.
#[derive(Clone, Copy, Debug)]
pub struct PinSpec<'a> {
    pub path: &'a [usize],
    pub lineage: &'a [usize],
}

/// Upper bound on the number of weighted outcomes (terminal selection included).
pub fn outcome_bound<R: Real>(model: &DiscreteFk<R>, n: usize, pins: &[PinSpec<'_>]) -> f64 {
    let t_max = model.horizon();
    let mut total = n as f64;
    for t in 0..t_max {
        let mut taken: Vec<usize> = pins.iter().map(|p| p.lineage[t]).collect();
        taken.sort_unstable();
        taken.dedup();
        let free = n - taken.len();
        let branch = if t == 0 {
            model.m1().iter().filter(|&&p| p > R::zero()).count() as f64
        } else {
            let row_support = model.transition(t + 1).iter().map(|r| r.iter().filter(|&&p| p > R::zero()).count()).max().unwrap_or(0);
            (n * row_support) as f64
        };
        total *= branch.powi(free as i32);
    }
    total
}

fn validate_pins<R: Real>(model: &DiscreteFk<R>, n: usize, pins: &[PinSpec<'_>]) -> Result<()> {
    let t_max = model.horizon();
    for p in pins {
        if p.path.len() != t_max || p.lineage.len() != t_max {
            return Err(Error::DimensionMismatch("pinned path and lineage need T entries".into()));
        }
        if p.lineage.iter().any(|&i| i >= n) || p.path.iter().any(|&z| z >= model.num_states()) {
            return Err(Error::IndexOutOfRange("pinned lineage or state out of range".into()));
        }
        for (t, &z) in p.path.iter().enumerate() {
            if model.potential(t + 1)[z] <= R::zero() {
                return Err(Error::PinnedPathZeroPotential { time: t + 1 });
            }
        }
    }
    for t in 0..t_max {
        for (a, pa) in pins.iter().enumerate() {
            for pb in &pins[a + 1..] {
                if pa.lineage[t] == pb.lineage[t] {
                    let same_parent = t == 0 || pa.lineage[t - 1] == pb.lineage[t - 1];
                    if pa.path[t] != pb.path[t] || !same_parent {
                        return Err(Error::LineageClash { time: t + 1 });
                    }
                }
            }
        }
    }
    Ok(())
}

struct Walker<'m, 'p, R: Real, F> {
    model: &'m DiscreteFk<R>,
    n: usize,
    pins: &'p [PinSpec<'p>],
    states: Vec<Vec<usize>>,
    ancestors: Vec<Vec<usize>>,
    weights: Vec<Vec<R>>,
    visit: F,
}

impl<R: Real, F: FnMut(&[Vec<usize>], &[Vec<usize>], R)> Walker<'_, '_, R, F> {
    fn pinned(&self, t: usize, i: usize) -> Option<&PinSpec<'_>> {
        self.pins.iter().find(|p| p.lineage[t] == i)
    }

    fn rec(&mut self, t: usize, i: usize, prob: R) -> Result<()> {
        if i == self.n {
            if t + 1 == self.model.horizon() {
                (self.visit)(&self.states, &self.ancestors, prob);
                return Ok(());
            }
            let g = self.model.potential(t + 1);
            let raw: Vec<R> = self.states[t].iter().map(|&z| g[z]).collect();
            let total: R = raw.iter().copied().sum();
            if total <= R::zero() {
                return Err(Error::AllWeightsZero { time: Some(t + 1) });
            }
            self.weights[t] = raw.iter().map(|&w| w / total).collect();
            return self.rec(t + 1, 0, prob);
        }
        if let Some(p) = self.pinned(t, i) {
            let (z, a) = (p.path[t], if t > 0 { p.lineage[t - 1] } else { 0 });
            self.states[t][i] = z;
            if t > 0 {
                self.ancestors[t - 1][i] = a;
            }
            return self.rec(t, i + 1, prob);
        }
        if t == 0 {
            for z in 0..self.model.num_states() {
                let p = self.model.m1()[z];
                if p > R::zero() {
                    self.states[0][i] = z;
                    self.rec(0, i + 1, prob * p)?;
                }
            }
            return Ok(());
        }
        for a in 0..self.n {
            let wa = self.weights[t - 1][a];
            if wa <= R::zero() {
                continue;
            }
            let parent = self.states[t - 1][a];
            for z in 0..self.model.num_states() {
                let p = self.model.transition(t + 1)[parent][z];
                if p > R::zero() {
                    self.states[t][i] = z;
                    self.ancestors[t - 1][i] = a;
                    self.rec(t, i + 1, prob * wa * p)?;
                }
            }
        }
        Ok(())
    }
}

/// Calls `visit(states, ancestors, probability)` for every positive-probability
/// particle configuration of the pass with the given pins (none: standard SMC).
pub fn for_each_outcome<R, F>(model: &DiscreteFk<R>, n: usize, pins: &[PinSpec<'_>], visit: F) -> Result<()>
where
    R: Real,
    F: FnMut(&[Vec<usize>], &[Vec<usize>], R),
{
    if n == 0 {
        return Err(Error::IndexOutOfRange("need at least one particle".into()));
    }
    validate_pins(model, n, pins)?;
    let size = outcome_bound(model, n, pins);
    if size > OUTCOME_LIMIT {
        return Err(Error::OutcomeSpaceTooLarge { size, limit: OUTCOME_LIMIT });
    }
    let t_max = model.horizon();
    let mut w = Walker {
        model,
        n,
        pins,
        states: vec![vec![0; n]; t_max],
        ancestors: vec![vec![0; n]; t_max - 1],
        weights: vec![Vec::new(); t_max],
        visit,
    };
    w.rec(0, 0, R::one())
}

/// Normalized terminal selection probabilities for the time-`T` particles.
pub fn terminal_weights<R: Real>(model: &DiscreteFk<R>, last: &[usize]) -> Vec<R> {
    let g = model.potential(model.horizon());
    let raw: Vec<R> = last.iter().map(|&z| g[z]).collect();
    let total: R = raw.iter().copied().sum();
    raw.iter().map(|&w| w / total).collect()
}

/// Lineage of terminal particle `l`, written into `out`.
pub fn trace_lineage(ancestors: &[Vec<usize>], l: usize, out: &mut [usize]) {
    let t_max = out.len();
    out[t_max - 1] = l;
    for t in (0..t_max - 1).rev() {
        out[t] = ancestors[t][out[t + 1]];
    }
}

/// `gamma_hat` of an enumerated configuration.
pub fn outcome_gamma_hat<R: Real>(model: &DiscreteFk<R>, states: &[Vec<usize>]) -> R {
    let n = R::of_usize(states[0].len());
    states.iter().enumerate().map(|(t, zs)| zs.iter().map(|&z| model.potential(t + 1)[z]).sum::<R>() / n).fold(R::one(), |a, b| a * b)
}
