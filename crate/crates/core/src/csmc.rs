//! Conditional SMC, path selection and the iterated cSMC chain.

use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::fk_model::FeynmanKacModel;
use crate::rng::Streams;
use crate::scalar::Real;
use crate::smc::{gamma_hat, run_pinned, ParticleSystem, Pin};
use crate::trajectory::Trajectory;

fn check_reference<M: FeynmanKacModel<R>, R: Real>(model: &M, x: &[M::State]) -> Result<()> {
    if x.len() != model.horizon() {
        return Err(Error::DimensionMismatch(format!("reference path has length {}, model has T = {}", x.len(), model.horizon())));
    }
    for (t, z) in x.iter().enumerate() {
        if model.log_potential(t, z) == R::neg_infinity() {
            return Err(Error::PinnedPathZeroPotential { time: t + 1 });
        }
    }
    Ok(())
}

/// Conditional SMC with particle 0 pinned to `x` along the all-zero lineage.
pub fn run_csmc<M: FeynmanKacModel<R>, R: Real>(
    model: &M,
    n: usize,
    x: &[M::State],
    streams: &Streams,
) -> Result<ParticleSystem<M::State, R>> {
    let lineage = vec![0; model.horizon()];
    run_csmc_with_lineage(model, n, x, &lineage, streams)
}

/// Conditional SMC with `x` pinned along an arbitrary lineage `k` (0-based indices).
pub fn run_csmc_with_lineage<M: FeynmanKacModel<R>, R: Real>(
    model: &M,
    n: usize,
    x: &[M::State],
    k: &[usize],
    streams: &Streams,
) -> Result<ParticleSystem<M::State, R>> {
    check_reference(model, x)?;
    if n == 0 || k.len() != x.len() || k.iter().any(|&i| i >= n) {
        return Err(Error::IndexOutOfRange(format!("lineage must have T entries in 0..{n}")));
    }
    run_pinned(model, n, &[Pin { path: x, lineage: k }], streams)
}

/// Traces the lineage of the selected terminal particle back to time 1.
///
/// `A_T` is drawn when the system is built, so no further randomness is used.
pub fn select_path<S: Clone, R: Real>(system: &ParticleSystem<S, R>) -> Trajectory<S> {
    let t_max = system.horizon();
    let mut lineage = vec![0; t_max];
    lineage[t_max - 1] = system.final_index;
    for t in (0..t_max - 1).rev() {
        lineage[t] = system.ancestors[t][lineage[t + 1]];
    }
    let points = lineage.iter().enumerate().map(|(t, &i)| system.states[t][i].clone()).collect();
    Trajectory::with_lineage(points, lineage)
}

/// Per-iteration statistics of the i-cSMC chain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterStats<R> {
    pub log_gamma_hat: R,
    /// Number of times `t` at which the new state equals the previous one.
    pub retained: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainTrace<S, R> {
    /// Initial state followed by one state per iteration.
    pub trajectories: Vec<Trajectory<S>>,
    pub stats: Vec<IterStats<R>>,
}

impl<S: Clone + std::fmt::Display, R: Real> ChainTrace<S, R> {
    pub fn iterations(&self) -> usize {
        self.stats.len()
    }

    /// `iteration,log_gamma_hat,retained_count,z1..zT`; row 0 is the initial state.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let t_max = self.trajectories.first().map_or(0, |t| t.len());
        let cols: Vec<String> = (1..=t_max).map(|t| format!("z{t}")).collect();
        writeln!(out, "iteration,log_gamma_hat,retained_count,{}", cols.join(","))?;
        for (j, tr) in self.trajectories.iter().enumerate() {
            let pts: Vec<String> = tr.points.iter().map(|z| z.to_string()).collect();
            match j.checked_sub(1).map(|k| self.stats[k]) {
                None => writeln!(out, "0,,,{}", pts.join(","))?,
                Some(st) => writeln!(out, "{j},{},{},{}", st.log_gamma_hat, st.retained, pts.join(","))?,
            }
        }
        Ok(())
    }
}

/// One i-cSMC transition from `x`, returning the new path and the pass's statistics.
pub fn icsmc_step<M: FeynmanKacModel<R>, R: Real>(
    model: &M,
    n: usize,
    x: &[M::State],
    streams: &Streams,
) -> Result<(Trajectory<M::State>, IterStats<R>)> {
    let sys = run_csmc(model, n, x, streams)?;
    let y = select_path(&sys);
    let retained = y.points.iter().zip(x).filter(|(a, b)| a == b).count();
    Ok((y, IterStats { log_gamma_hat: gamma_hat(&sys)?.log_value, retained }))
}

/// Runs `n_iter` i-cSMC iterations from `x0`; iteration `j` draws from `streams.child(j)`.
pub fn icsmc_chain<M: FeynmanKacModel<R>, R: Real>(
    model: &M,
    n: usize,
    x0: &[M::State],
    n_iter: usize,
    streams: &Streams,
) -> Result<ChainTrace<M::State, R>> {
    check_reference(model, x0)?;
    let mut trajectories = Vec::with_capacity(n_iter + 1);
    let mut stats = Vec::with_capacity(n_iter);
    trajectories.push(Trajectory::new(x0.to_vec()));
    for j in 0..n_iter {
        let cur = &trajectories[j].points;
        let (y, st) = icsmc_step(model, n, cur, &streams.child(j as u64))?;
        trajectories.push(y);
        stats.push(st);
    }
    Ok(ChainTrace { trajectories, stats })
}

/// One draw from the kernel of the artificial joint construction: pin `x` along
/// lineage `k` (drawn uniformly from `[N]^T` when `None`), run cSMC, select.
pub fn artificial_joint_step<M: FeynmanKacModel<R>, R: Real>(
    model: &M,
    n: usize,
    x: &[M::State],
    k: Option<&[usize]>,
    streams: &Streams,
) -> Result<Trajectory<M::State>> {
    let drawn;
    let k = match k {
        Some(k) => k,
        None => {
            let mut rng = streams.step_rng(u64::MAX - 1);
            drawn = (0..model.horizon()).map(|_| rng.random_range(0..n.max(1))).collect::<Vec<_>>();
            &drawn
        }
    };
    let sys = run_csmc_with_lineage(model, n, x, k, streams)?;
    Ok(select_path(&sys))
}
