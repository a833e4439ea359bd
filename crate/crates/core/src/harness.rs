//! Config-driven experiment runner and the output files it writes.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{epsilon_bounded, write_bounds_csv, BoundReport};
use crate::csmc::{icsmc_chain, icsmc_step, select_path, ChainTrace};
use crate::enumerate::{for_each_outcome, PinSpec};
use crate::error::{Error, Result};
use crate::fixtures::{sticky_control, sticky_example};
use crate::fk_model::{exact_target, load_model, DiscreteFk};
use crate::numeric::KahanSum;
use crate::oracle::{exact_pn_matrix, exact_pn_row, spectral_summary, tv_curve, FiniteChain};
use crate::pgibbs::{
    csmc_kernels, evaluate_path_chain, evaluate_theta_chain, load_joint_model, pgibbs_step, pimh_step, pmmh_step, PimhState, PmmhState,
};
use crate::rng::Streams;
use crate::smc::run_smc;
use crate::trajectory::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Icsmc,
    Isir,
    Pgibbs,
    Pimh,
    Pmmh,
    Oracle,
    Bounds,
    Sticky,
}

impl ExperimentKind {
    pub fn is_simulation(self) -> bool {
        matches!(self, Self::Icsmc | Self::Isir | Self::Pimh | Self::Pmmh)
    }
}

/// A single particle count or a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParticleCounts {
    One(usize),
    Sweep(Vec<usize>),
}

impl ParticleCounts {
    pub fn values(&self) -> Vec<usize> {
        match self {
            Self::One(n) => vec![*n],
            Self::Sweep(v) => v.clone(),
        }
    }
}

fn default_one() -> usize {
    1
}

fn default_batches() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Model file; a joint model file for `pgibbs` and `pmmh`. Unused by `sticky`.
    #[serde(default)]
    pub model_path: Option<PathBuf>,
    #[serde(default)]
    pub kind: Option<ExperimentKind>,
    #[serde(rename = "N")]
    pub particles: ParticleCounts,
    #[serde(default)]
    pub iterations: usize,
    #[serde(default = "default_one")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Initial path for chains; drawn from one SMC pass when absent.
    #[serde(default)]
    pub x0: Option<Vec<usize>>,
    #[serde(default)]
    pub initial_theta: usize,
    /// PMMH proposal over parameter indices; uniform when absent.
    #[serde(default)]
    pub proposal: Option<Vec<Vec<f64>>>,
    /// Function of the parameter for the joint-chain checks; indicator of the first value when absent.
    #[serde(default)]
    pub f_theta: Option<Vec<f64>>,
    #[serde(rename = "K", default)]
    pub sticky_k: Option<usize>,
    #[serde(default)]
    pub n_grid: Option<Vec<usize>>,
    #[serde(default)]
    pub samples: usize,
    /// Run the sticky experiment on the bounded-potential control model.
    #[serde(default)]
    pub control: bool,
    #[serde(default = "default_batches")]
    pub batches: usize,
    #[serde(default = "default_tv_steps")]
    pub tv_steps: usize,
}

fn default_tv_steps() -> usize {
    50
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::ConfigParse(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        // Model paths are relative to the config file.
        if let (Some(mp), Some(dir)) = (&cfg.model_path, path.parent()) {
            if mp.is_relative() {
                cfg.model_path = Some(dir.join(mp));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let ns = self.particles.values();
        if ns.is_empty() || ns.contains(&0) {
            return Err(Error::ConfigParse("N must list particle counts >= 1".into()));
        }
        if self.replicates == 0 {
            return Err(Error::ConfigParse("replicates must be >= 1".into()));
        }
        Ok(())
    }

    fn model_path(&self) -> Result<&Path> {
        self.model_path.as_deref().ok_or_else(|| Error::ConfigParse("model_path is required for this experiment".into()))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub crate_version: String,
    pub particles: Vec<usize>,
    pub wall_time_seconds: f64,
    pub files: Vec<String>,
    pub failed_checks: Vec<String>,
}

/// Outcome of a run: files written and any violated assertions.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub files: Vec<String>,
    pub failed_checks: Vec<String>,
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn write(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(fs::File::create(&path)?);
        body(&mut w)?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }
}

fn path_label(p: &[usize]) -> String {
    p.iter().map(|z| z.to_string()).collect::<Vec<_>>().join("-")
}

pub fn write_kernel_csv<W: Write + ?Sized>(chain: &FiniteChain<f64>, out: &mut W) -> Result<()> {
    let labels: Vec<String> = chain.states.iter().map(|s| path_label(s)).collect();
    writeln!(out, "state,{}", labels.join(","))?;
    for (r, l) in labels.iter().enumerate() {
        let row: Vec<String> = chain.kernel.row(r).iter().map(|v| v.to_string()).collect();
        writeln!(out, "{l},{}", row.join(","))?;
    }
    Ok(())
}

fn initial_path(model: &DiscreteFk<f64>, cfg: &ExperimentConfig, streams: &Streams) -> Result<Vec<usize>> {
    match &cfg.x0 {
        Some(x) => Ok(x.clone()),
        None => Ok(select_path(&run_smc(model, 64, &streams.child(u64::MAX))?).points),
    }
}

/// Runs one configured experiment and writes its outputs under `output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, output_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let kind = cfg.kind.ok_or_else(|| Error::ConfigParse("experiment kind missing".into()))?;
    let start = Instant::now();
    let mut out = Outputs::new(output_dir)?;
    let mut failed = Vec::new();
    let root = Streams::new(cfg.seed);
    let ns = cfg.particles.values();

    match kind {
        ExperimentKind::Icsmc | ExperimentKind::Isir => {
            let model = load_model(cfg.model_path()?)?;
            if kind == ExperimentKind::Isir && model.horizon() != 1 {
                return Err(Error::ConfigParse("isir needs a model with T = 1".into()));
            }
            let x0 = initial_path(&model, cfg, &root)?;
            for &n in &ns {
                let traces: Vec<ChainTrace<usize, f64>> = (0..cfg.replicates)
                    .into_par_iter()
                    .map(|r| icsmc_chain(&model, n, &x0, cfg.iterations, &root.child(n as u64).child(r as u64)))
                    .collect::<Result<_>>()?;
                for (r, tr) in traces.iter().enumerate() {
                    out.write(&format!("chain_N{n}_rep{r}.csv"), |w| tr.write_csv(w))?;
                }
            }
        }
        ExperimentKind::Pimh => {
            let model = load_model(cfg.model_path()?)?;
            for &n in &ns {
                let rows: Vec<Vec<(PimhState<f64>, bool)>> = (0..cfg.replicates)
                    .into_par_iter()
                    .map(|r| {
                        let s = root.child(n as u64).child(r as u64);
                        let mut cur = PimhState::init(&model, n, &s.child(u64::MAX))?;
                        let mut rows = Vec::with_capacity(cfg.iterations);
                        for j in 0..cfg.iterations {
                            let (next, acc) = pimh_step(&model, n, &cur, &s.child(j as u64))?;
                            rows.push((next.clone(), acc));
                            cur = next;
                        }
                        Ok(rows)
                    })
                    .collect::<Result<_>>()?;
                for (r, chain) in rows.iter().enumerate() {
                    out.write(&format!("pimh_N{n}_rep{r}.csv"), |w| {
                        writeln!(w, "iteration,log_gamma_hat,accepted,path")?;
                        for (j, (st, acc)) in chain.iter().enumerate() {
                            writeln!(w, "{},{},{},{}", j + 1, st.log_gamma_hat, u8::from(*acc), path_label(&st.path.points))?;
                        }
                        Ok(())
                    })?;
                }
            }
        }
        ExperimentKind::Pmmh => {
            let jm = load_joint_model(cfg.model_path()?)?;
            let jn = jm.num_thetas();
            let q = cfg.proposal.clone().unwrap_or_else(|| vec![vec![1.0 / jn as f64; jn]; jn]);
            for &n in &ns {
                let mut cur = PmmhState::init(&jm, cfg.initial_theta, n, &root.child(n as u64).child(u64::MAX))?;
                let mut rows = Vec::with_capacity(cfg.iterations);
                for j in 0..cfg.iterations {
                    let (next, acc) = pmmh_step(&jm, n, &q, &cur, &root.child(n as u64).child(j as u64))?;
                    rows.push((next, acc));
                    cur = next;
                }
                out.write(&format!("pmmh_N{n}.csv"), |w| {
                    writeln!(w, "iteration,theta,log_gamma_hat,accepted")?;
                    for (j, (st, acc)) in rows.iter().enumerate() {
                        writeln!(w, "{},{},{},{}", j + 1, jm.thetas()[st.theta], st.log_gamma_hat, u8::from(*acc))?;
                    }
                    Ok(())
                })?;
            }
        }
        ExperimentKind::Oracle => {
            let model = load_model(cfg.model_path()?)?;
            for &n in &ns {
                let chain = exact_pn_matrix(&model, n)?;
                let dir = format!("oracle_N{n}");
                out.write(&format!("{dir}/kernel.csv"), |w| write_kernel_csv(&chain, w))?;
                out.write(&format!("{dir}/stationary.csv"), |w| {
                    writeln!(w, "state,pi")?;
                    for (s, p) in chain.states.iter().zip(chain.stationary.iter()) {
                        writeln!(w, "{},{}", path_label(s), p)?;
                    }
                    Ok(())
                })?;
                out.write(&format!("{dir}/tv.csv"), |w| {
                    let labels: Vec<String> = chain.states.iter().map(|s| path_label(s)).collect();
                    writeln!(w, "n,{}", labels.join(","))?;
                    let curves: Vec<Vec<f64>> = (0..chain.len()).map(|x| tv_curve(&chain, x, cfg.tv_steps)).collect();
                    for step in 0..=cfg.tv_steps {
                        let row: Vec<String> = curves.iter().map(|c| c[step].to_string()).collect();
                        writeln!(w, "{step},{}", row.join(","))?;
                    }
                    Ok(())
                })?;
                let s = spectral_summary(&chain)?;
                out.write(&format!("{dir}/spectral.csv"), |w| {
                    writeln!(w, "gap_right,gap_left,lambda_2,min_eigenvalue,is_positive,reversibility_violation")?;
                    writeln!(
                        w,
                        "{},{},{},{},{},{}",
                        s.gap_right,
                        s.gap_left,
                        s.lambda_2,
                        s.min_eigenvalue,
                        s.is_positive,
                        chain.detailed_balance_violation()
                    )?;
                    Ok(())
                })?;
            }
        }
        ExperimentKind::Bounds => {
            let model = load_model(cfg.model_path()?)?;
            let rows: Vec<BoundReport<f64>> = ns.iter().map(|&n| epsilon_bounded(&model, n)).collect::<Result<_>>()?;
            out.write("bounds.csv", |w| write_bounds_csv(&rows, w))?;
        }
        ExperimentKind::Pgibbs => {
            let jm = load_joint_model(cfg.model_path()?)?;
            let f_theta = cfg.f_theta.clone().unwrap_or_else(|| (0..jm.num_thetas()).map(|j| if j == 0 { 1.0 } else { 0.0 }).collect());
            for &n in &ns {
                let kernels = csmc_kernels(&jm, n)?;
                let (path_rep, rho) = evaluate_path_chain(&jm, &kernels, 1e-9)?;
                let theta_rep = evaluate_theta_chain(&jm, n, &f_theta)?;
                out.write(&format!("pgibbs_N{n}/path_chain_checks.csv"), |w| Ok(w.write_all(path_rep.to_csv().as_bytes())?))?;
                out.write(&format!("pgibbs_N{n}/theta_chain_checks.csv"), |w| Ok(w.write_all(theta_rep.to_csv().as_bytes())?))?;
                out.write(&format!("pgibbs_N{n}/rho.csv"), |w| {
                    writeln!(w, "rho_exact,rho_lower")?;
                    writeln!(w, "{},{}", rho.rho_exact, rho.rho_lower)?;
                    Ok(())
                })?;
                for r in path_rep.failures().into_iter().chain(theta_rep.failures()) {
                    failed.push(format!("N={n} {}: {} vs {} at {}", r.name, r.lhs, r.rhs, r.witness));
                }
                if cfg.iterations > 0 {
                    let x0 = match &cfg.x0 {
                        Some(x) => x.clone(),
                        None => jm.paths()[0].clone(),
                    };
                    let mut x = x0;
                    let mut rows = Vec::with_capacity(cfg.iterations);
                    for j in 0..cfg.iterations {
                        let (th, y) = pgibbs_step(&jm, n, &x, &root.child(n as u64).child(j as u64))?;
                        x = y.points;
                        rows.push((th, x.clone()));
                    }
                    out.write(&format!("pgibbs_N{n}/chain.csv"), |w| {
                        writeln!(w, "iteration,theta,path")?;
                        for (j, (th, p)) in rows.iter().enumerate() {
                            writeln!(w, "{},{},{}", j + 1, jm.thetas()[*th], path_label(p))?;
                        }
                        Ok(())
                    })?;
                }
            }
        }
        ExperimentKind::Sticky => {
            let k = cfg.sticky_k.unwrap_or(16);
            let grid = cfg.n_grid.clone().unwrap_or_else(|| (1..=k).collect());
            for &n in &ns {
                let model = if cfg.control { sticky_control(k) } else { sticky_example(k) };
                let rep = sticky_rows(&model, n, &grid, cfg.samples, cfg.seed)?;
                out.write(&format!("sticky_N{n}.csv"), |w| rep.write_csv(w))?;
                if cfg.samples > 0 {
                    out.write(&format!("sticky_mc_N{n}.csv"), |w| rep.write_mc_csv(w))?;
                }
            }
        }
    }

    let manifest = Manifest {
        kind,
        seed: cfg.seed,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        particles: ns,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        files: out.files.clone(),
        failed_checks: failed.clone(),
    };
    fs::write(out.dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(RunSummary { output_dir: out.dir, files: out.files, failed_checks: failed })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StickyRow {
    pub n: usize,
    pub stay_probability: f64,
    pub suff_expectation: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StickyMcRow {
    pub n: usize,
    pub stay_frequency: f64,
    pub standard_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct StickyReport {
    pub rows: Vec<StickyRow>,
    pub mc: Vec<StickyMcRow>,
}

impl StickyReport {
    pub fn write_csv<W: Write + ?Sized>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "n,stay_probability,suff_expectation")?;
        for r in &self.rows {
            writeln!(out, "{},{},{}", r.n, r.stay_probability, r.suff_expectation)?;
        }
        Ok(())
    }

    pub fn write_mc_csv<W: Write + ?Sized>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "n,stay_frequency,standard_error")?;
        for r in &self.mc {
            writeln!(out, "{},{},{}", r.n, r.stay_frequency, r.standard_error)?;
        }
        Ok(())
    }
}

/// `E_{1,x}[G_T(x_T) / sum_k G_T(Z_T^k)]`, the probability the reference survives the final selection.
pub fn suff_expectation(model: &DiscreteFk<f64>, n: usize, x: &[usize]) -> Result<f64> {
    let t = model.horizon();
    let zeros = vec![0; t];
    let g = model.potential(t);
    let mut acc = KahanSum::new();
    for_each_outcome(model, n, &[PinSpec { path: x, lineage: &zeros }], |states, _, p| {
        let last = &states[t - 1];
        let total: f64 = last.iter().map(|&z| g[z]).sum();
        acc.add(p * g[x[t - 1]] / total);
    })?;
    Ok(acc.value())
}

/// Stay probabilities of the sets `{(n, 2n), (n, 2n+1)}` from `(n, 2n)` on a
/// two-step model whose states are labelled by their index.
pub fn sticky_rows(model: &DiscreteFk<f64>, n_particles: usize, grid: &[usize], samples: usize, seed: u64) -> Result<StickyReport> {
    let target = exact_target(model)?;
    let rows = grid
        .par_iter()
        .map(|&n| {
            let x = [n, 2 * n];
            let row = exact_pn_row(model, &target, n_particles, &x, &[0, 0])?;
            let stay: f64 = [[n, 2 * n], [n, 2 * n + 1]].iter().filter_map(|p| target.index_of(p)).map(|i| row[i]).sum();
            Ok(StickyRow { n, stay_probability: stay, suff_expectation: suff_expectation(model, n_particles, &x)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mc = Vec::new();
    if samples > 0 {
        let root = Streams::new(seed);
        for &n in grid {
            let x = [n, 2 * n];
            let mut stays = 0usize;
            for s in 0..samples {
                let (y, _) = icsmc_step::<_, f64>(model, n_particles, &x, &root.child(n as u64).child(s as u64))?;
                stays += usize::from(y.points[0] == n);
            }
            let p = stays as f64 / samples as f64;
            mc.push(StickyMcRow { n, stay_frequency: p, standard_error: (p * (1.0 - p) / samples as f64).sqrt() });
        }
    }
    Ok(StickyReport { rows, mc })
}

/// Exact sticky-set diagnostics on the unbounded-potential example truncated at `k`.
pub fn sticky_experiment(k: usize, n_particles: usize, grid: &[usize], samples: usize, seed: u64) -> Result<StickyReport> {
    sticky_rows(&sticky_example(k), n_particles, grid, samples, seed)
}

/// Batch-means estimate of the asymptotic variance of a scalar series.
pub fn batch_means(values: &[f64], batches: usize) -> Result<f64> {
    if batches < 2 || values.len() < 2 * batches {
        return Err(Error::TraceTooShort { len: values.len(), batches });
    }
    let b = values.len() / batches;
    let means: Vec<f64> = values.chunks_exact(b).take(batches).map(|c| c.iter().sum::<f64>() / b as f64).collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let s2 = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    Ok(b as f64 * s2)
}

/// Batch-means estimate of `var(f, P)` along a chain trace, excluding the initial state.
pub fn batch_means_variance<F: Fn(&Trajectory) -> f64>(trace: &ChainTrace<usize, f64>, f: F, batches: usize) -> Result<f64> {
    let values: Vec<f64> = trace.trajectories.iter().skip(1).map(f).collect();
    batch_means(&values, batches)
}
