//! Standard SMC with multinomial resampling and the estimator `gamma_hat`.
//!
//! All particle passes (plain, conditional, doubly conditional) share one
//! engine: a set of pinned particles whose states and ancestors are fixed,
//! with every other particle resampled and propagated from its own stream.

use std::collections::HashMap;
use std::fmt::Display;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fk_model::{draw_cumulative, DiscreteFk, FeynmanKacModel};
use crate::numeric::{log_sum_exp, shifted_weights};
use crate::rng::Streams;
use crate::scalar::Real;

/// Particle counts at or above this propagate in parallel. Results are identical either way.
const PARALLEL_THRESHOLD: usize = 512;

/// One SMC pass. `ancestors[t][i]` is the time-`t` parent of particle `i` at time `t+1`
/// (0-based throughout); `final_index` is the selected terminal particle `A_T`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSystem<S, R> {
    pub states: Vec<Vec<S>>,
    pub ancestors: Vec<Vec<usize>>,
    pub final_index: usize,
    pub log_potentials: Vec<Vec<R>>,
}

impl<S: Clone, R: Real> ParticleSystem<S, R> {
    pub fn num_particles(&self) -> usize {
        self.states[0].len()
    }

    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    /// Checks index ranges and that stored log-potentials match the model.
    pub fn validate<M: FeynmanKacModel<R, State = S>>(&self, model: &M) -> Result<()> {
        let n = self.num_particles();
        if self.final_index >= n || self.ancestors.iter().flatten().any(|&a| a >= n) {
            return Err(Error::IndexOutOfRange("ancestor index outside the particle range".into()));
        }
        for (t, (zs, lgs)) in self.states.iter().zip(&self.log_potentials).enumerate() {
            for (z, &lg) in zs.iter().zip(lgs) {
                let fresh = model.log_potential(t, z);
                if fresh != lg && !(fresh.is_nan() && lg.is_nan()) {
                    return Err(Error::InconsistentBound(format!("stored log G_{} differs from model", t + 1)));
                }
            }
        }
        Ok(())
    }

    /// Writes `t,i,state,ancestor,logG,selected` rows with 1-based `t`, `i` and `ancestor`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()>
    where
        S: Display,
    {
        writeln!(out, "t,i,state,ancestor,logG,selected")?;
        let t_max = self.horizon();
        for t in 0..t_max {
            for i in 0..self.num_particles() {
                let anc = if t == 0 { String::new() } else { (self.ancestors[t - 1][i] + 1).to_string() };
                let sel = u8::from(t + 1 == t_max && i == self.final_index);
                writeln!(out, "{},{},{},{},{},{}", t + 1, i + 1, self.states[t][i], anc, self.log_potentials[t][i], sel)?;
            }
        }
        Ok(())
    }
}

/// `log gamma_hat` for one SMC pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormConstEstimate<R> {
    pub log_value: R,
}

impl<R: Real> NormConstEstimate<R> {
    pub fn value(&self) -> R {
        self.log_value.exp()
    }
}

/// `log gamma_hat = sum_t [logsumexp_i log G_t(z_t^i) - log N]`.
pub fn gamma_hat<S: Clone, R: Real>(system: &ParticleSystem<S, R>) -> Result<NormConstEstimate<R>> {
    let ln_n = R::of_usize(system.num_particles()).ln();
    let mut total = R::zero();
    for (t, lg) in system.log_potentials.iter().enumerate() {
        let l = log_sum_exp(lg);
        if l == R::neg_infinity() {
            return Err(Error::Degenerate { time: t + 1 });
        }
        total = total + l - ln_n;
    }
    Ok(NormConstEstimate { log_value: total })
}

/// `count` i.i.d. indices with probabilities proportional to `weights`.
pub fn multinomial_resample<R: Real, G: Rng + ?Sized>(weights: &[R], count: usize, rng: &mut G) -> Result<Vec<usize>> {
    let cum = cumulative_weights(weights).ok_or(Error::AllWeightsZero { time: None })?;
    Ok((0..count).map(|_| draw_cumulative(&cum, rng)).collect())
}

fn cumulative_weights<R: Real>(weights: &[R]) -> Option<Vec<R>> {
    if weights.iter().any(|&w| w < R::zero() || w.is_nan()) {
        return None;
    }
    let mut acc = R::zero();
    let cum: Vec<R> = weights
        .iter()
        .map(|&w| {
            acc += w;
            acc
        })
        .collect();
    (acc > R::zero()).then_some(cum)
}

/// A particle whose whole path and lineage are fixed.
pub(crate) struct Pin<'a, S> {
    pub path: &'a [S],
    /// 0-based particle index at each time.
    pub lineage: &'a [usize],
}

/// Runs the shared engine. With no pins this is the standard SMC law.
pub(crate) fn run_pinned<M, R>(model: &M, n: usize, pins: &[Pin<'_, M::State>], streams: &Streams) -> Result<ParticleSystem<M::State, R>>
where
    M: FeynmanKacModel<R>,
    R: Real,
{
    let horizon = model.horizon();
    let mut states: Vec<Vec<M::State>> = Vec::with_capacity(horizon);
    let mut log_potentials: Vec<Vec<R>> = Vec::with_capacity(horizon);
    let mut ancestors: Vec<Vec<usize>> = Vec::with_capacity(horizon.saturating_sub(1));

    let pinned_at = |t: usize, i: usize| pins.iter().find(|p| p.lineage[t] == i);

    let first = map_particles(n, |i| {
        if let Some(p) = pinned_at(0, i) {
            return (p.path[0].clone(), 0);
        }
        let mut rng = streams.rng(0, i as u64);
        (model.sample_initial(&mut rng), 0)
    });
    let zs: Vec<M::State> = first.into_iter().map(|(z, _)| z).collect();
    log_potentials.push(zs.iter().map(|z| model.log_potential(0, z)).collect());
    states.push(zs);

    for t in 1..horizon {
        let w = shifted_weights(&log_potentials[t - 1]).ok_or(Error::AllWeightsZero { time: Some(t) })?;
        let cum = cumulative_weights(&w).ok_or(Error::AllWeightsZero { time: Some(t) })?;
        let prev = &states[t - 1];
        let step = map_particles(n, |i| {
            if let Some(p) = pinned_at(t, i) {
                return (p.path[t].clone(), p.lineage[t - 1]);
            }
            let mut rng = streams.rng(t as u64, i as u64);
            let a = draw_cumulative(&cum, &mut rng);
            (model.sample_transition(t, &prev[a], &mut rng), a)
        });
        let (zs, anc): (Vec<_>, Vec<_>) = step.into_iter().unzip();
        log_potentials.push(zs.iter().map(|z| model.log_potential(t, z)).collect());
        states.push(zs);
        ancestors.push(anc);
    }

    let w = shifted_weights(&log_potentials[horizon - 1]).ok_or(Error::AllWeightsZero { time: Some(horizon) })?;
    let cum = cumulative_weights(&w).ok_or(Error::AllWeightsZero { time: Some(horizon) })?;
    let final_index = draw_cumulative(&cum, &mut streams.step_rng(horizon as u64));
    Ok(ParticleSystem { states, ancestors, final_index, log_potentials })
}

fn map_particles<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    if n >= PARALLEL_THRESHOLD {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// One standard SMC pass with `n` particles.
pub fn run_smc<M: FeynmanKacModel<R>, R: Real>(model: &M, n: usize, streams: &Streams) -> Result<ParticleSystem<M::State, R>> {
    if n == 0 {
        return Err(Error::IndexOutOfRange("need at least one particle".into()));
    }
    run_pinned(model, n, &[], streams)
}

/// Exact law of `gamma_hat` under the standard SMC algorithm, as `(value, probability)`
/// pairs sorted by value.
///
/// Particles are exchangeable, so the pass is summarized by occupancy counts per
/// time: given counts `c_t`, the next generation is multinomial with cell
/// probabilities `sum_z c_t(z) G_t(z) M_{t+1}(z, .) / sum_z c_t(z) G_t(z)`.
pub fn gamma_hat_law<R: Real>(model: &DiscreteFk<R>, n: usize) -> Result<Vec<(R, R)>> {
    let s = model.num_states();
    let compositions = compositions(n, s);
    if compositions.len() as f64 * compositions.len() as f64 * model.horizon() as f64 > 1e8 {
        return Err(Error::OutcomeSpaceTooLarge { size: (compositions.len() as f64).powi(model.horizon() as i32), limit: 1e8 });
    }
    let ln_fact: Vec<f64> = (0..=n)
        .scan(0.0, |acc, k| {
            if k > 0 {
                *acc += (k as f64).ln();
            }
            Some(*acc)
        })
        .collect();
    let multinomial = |probs: &[R], c: &[usize]| -> R {
        let mut lp = ln_fact[n];
        for (&ci, &p) in c.iter().zip(probs) {
            if ci > 0 {
                if p <= R::zero() {
                    return R::zero();
                }
                lp += ci as f64 * p.to_f64_lossy().ln() - ln_fact[ci];
            }
        }
        R::of(lp.exp())
    };

    // (counts, running product of mean potentials) -> probability
    let mut layer: HashMap<(Vec<usize>, u64), (R, R)> = HashMap::new();
    let g1 = model.potential(1);
    for c in &compositions {
        let p = multinomial(model.m1(), c);
        if p > R::zero() {
            let mean = mean_potential(g1, c, n);
            *layer.entry((c.clone(), mean.to_f64_lossy().to_bits())).or_insert((mean, R::zero())) = (mean, p);
        }
    }
    for t in 2..=model.horizon() {
        let g_prev = model.potential(t - 1);
        let g_t = model.potential(t);
        let mt = model.transition(t);
        let mut next: HashMap<(Vec<usize>, u64), (R, R)> = HashMap::new();
        for ((c, _), (prod, p)) in layer {
            let weights: Vec<R> = c.iter().zip(g_prev).map(|(&ci, &g)| R::of_usize(ci) * g).collect();
            let total: R = weights.iter().copied().sum();
            if total <= R::zero() {
                // gamma_hat is already zero; the pass aborts, value recorded as zero.
                let e = next.entry((vec![usize::MAX], 0)).or_insert((R::zero(), R::zero()));
                e.1 += p;
                continue;
            }
            let nu: Vec<R> = (0..s).map(|u| weights.iter().zip(mt).map(|(&w, row)| w * row[u]).sum::<R>() / total).collect();
            for c2 in &compositions {
                let q = multinomial(&nu, c2);
                if q > R::zero() {
                    let v = prod * mean_potential(g_t, c2, n);
                    let e = next.entry((c2.clone(), v.to_f64_lossy().to_bits())).or_insert((v, R::zero()));
                    e.1 += p * q;
                }
            }
        }
        layer = next;
    }
    let mut by_value: HashMap<u64, (R, R)> = HashMap::new();
    for (_, (v, p)) in layer {
        let e = by_value.entry(v.to_f64_lossy().to_bits()).or_insert((v, R::zero()));
        e.1 += p;
    }
    let mut out: Vec<(R, R)> = by_value.into_values().collect();
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite values"));
    Ok(out)
}

fn mean_potential<R: Real>(g: &[R], c: &[usize], n: usize) -> R {
    c.iter().zip(g).map(|(&ci, &gz)| R::of_usize(ci) * gz).sum::<R>() / R::of_usize(n)
}

/// All ways to write `n` as an ordered sum of `parts` non-negative integers.
pub(crate) fn compositions(n: usize, parts: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0; parts];
    fn rec(i: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i + 1 == cur.len() {
            cur[i] = left;
            out.push(cur.clone());
            return;
        }
        for k in 0..=left {
            cur[i] = k;
            rec(i + 1, left - k, cur, out);
        }
    }
    rec(0, n, &mut cur, &mut out);
    out
}
