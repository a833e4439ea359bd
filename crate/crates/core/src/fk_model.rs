//! Feynman–Kac models: a generative interface and an exact finite form.
//!
//! Time is 1-based in every public signature that takes a `p`, `q` or `t`
//! documented as such; vectors indexed by time (`m`, `g`, particle arrays)
//! are 0-based, so `g[t - 1]` is `G_t`.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::KahanSum;
use crate::scalar::Real;

/// Generative Feynman–Kac model. `time` arguments here are 0-based.
pub trait FeynmanKacModel<R: Real>: Sync {
    type State: Clone + PartialEq + std::fmt::Debug + Send + Sync;

    fn horizon(&self) -> usize;

    fn sample_initial<G: Rng + ?Sized>(&self, rng: &mut G) -> Self::State;

    /// Draws `Z_{time}` given `Z_{time-1} = prev`; `time >= 1`.
    fn sample_transition<G: Rng + ?Sized>(&self, time: usize, prev: &Self::State, rng: &mut G) -> Self::State;

    /// `log G_{time}(state)`; `-inf` for a zero potential.
    fn log_potential(&self, time: usize, state: &Self::State) -> R;
}

pub const PATH_SPACE_LIMIT: f64 = 1e7;
const ROW_SUM_TOL: f64 = 1e-9;

/// Finite-state Feynman–Kac model with explicit tables.
#[derive(Clone, Debug)]
pub struct DiscreteFk<R: Real = f64> {
    alphabet: Vec<String>,
    m1: Vec<R>,
    m: Vec<Vec<Vec<R>>>,
    g: Vec<Vec<R>>,
    log_g: Vec<Vec<R>>,
    cum_m1: Vec<R>,
    cum_m: Vec<Vec<Vec<R>>>,
}

fn cumulative<R: Real>(p: &[R]) -> Vec<R> {
    let mut acc = R::zero();
    p.iter()
        .map(|&v| {
            acc += v;
            acc
        })
        .collect()
}

/// Index drawn from unnormalized cumulative weights, skipping zero-mass cells.
pub(crate) fn draw_cumulative<R: Real, G: Rng + ?Sized>(cum: &[R], rng: &mut G) -> usize {
    let total = *cum.last().expect("non-empty distribution");
    let u = R::of(rng.random::<f64>()) * total;
    let idx = cum.partition_point(|&c| c <= u);
    idx.min(cum.len() - 1)
}

fn check_distribution<R: Real>(table: &str, row: usize, p: &[R]) -> Result<()> {
    if p.iter().any(|&v| v < R::zero() || !v.is_finite()) {
        return Err(Error::NegativeProbability { table: table.into(), row });
    }
    let sum = p.iter().copied().sum::<R>().to_f64_lossy();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::NonStochasticRow { table: table.into(), row, sum });
    }
    Ok(())
}

impl<R: Real> DiscreteFk<R> {
    /// Validates and builds a model. `m` holds `M_2..M_T`, `g` holds `G_1..G_T`.
    pub fn new(alphabet: Vec<String>, m1: Vec<R>, m: Vec<Vec<Vec<R>>>, g: Vec<Vec<R>>) -> Result<Self> {
        let s = alphabet.len();
        let t = g.len();
        if s == 0 || t == 0 {
            return Err(Error::DimensionMismatch("need at least one state and one time step".into()));
        }
        if m1.len() != s {
            return Err(Error::DimensionMismatch(format!("m1 has {} entries, alphabet has {s}", m1.len())));
        }
        if m.len() + 1 != t {
            return Err(Error::DimensionMismatch(format!("{} potentials need {} transitions, got {}", t, t - 1, m.len())));
        }
        for (i, mt) in m.iter().enumerate() {
            if mt.len() != s || mt.iter().any(|r| r.len() != s) {
                return Err(Error::DimensionMismatch(format!("M_{} is not {s}x{s}", i + 2)));
            }
        }
        for (i, gt) in g.iter().enumerate() {
            if gt.len() != s {
                return Err(Error::DimensionMismatch(format!("G_{} has {} entries, alphabet has {s}", i + 1, gt.len())));
            }
        }
        check_distribution("m1", 0, &m1)?;
        for (i, mt) in m.iter().enumerate() {
            for (r, row) in mt.iter().enumerate() {
                check_distribution(&format!("M_{}", i + 2), r, row)?;
            }
        }
        for (i, gt) in g.iter().enumerate() {
            if let Some(state) = gt.iter().position(|&v| v < R::zero() || !v.is_finite()) {
                return Err(Error::NegativePotential { time: i + 1, state });
            }
        }
        let log_g = g.iter().map(|gt| gt.iter().map(|&v| v.ln()).collect()).collect();
        let cum_m1 = cumulative(&m1);
        let cum_m = m.iter().map(|mt| mt.iter().map(|r| cumulative(r)).collect()).collect();
        let model = Self { alphabet, m1, m, g, log_g, cum_m1, cum_m };
        if model.gamma_0q(t + 1)? <= R::zero() {
            return Err(Error::ZeroNormalizingConstant);
        }
        Ok(model)
    }

    /// Builds a model with states labelled `0..S`.
    pub fn from_tables(m1: Vec<R>, m: Vec<Vec<Vec<R>>>, g: Vec<Vec<R>>) -> Result<Self> {
        let alphabet = (0..m1.len()).map(|i| i.to_string()).collect();
        Self::new(alphabet, m1, m, g)
    }

    pub fn horizon(&self) -> usize {
        self.g.len()
    }

    pub fn num_states(&self) -> usize {
        self.alphabet.len()
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn m1(&self) -> &[R] {
        &self.m1
    }

    /// `M_t` for `t` in `2..=T`.
    pub fn transition(&self, t: usize) -> &[Vec<R>] {
        &self.m[t - 2]
    }

    /// `G_t` for `t` in `1..=T`.
    pub fn potential(&self, t: usize) -> &[R] {
        &self.g[t - 1]
    }

    /// Prior (Markov chain) probability of a path.
    pub fn path_prior(&self, path: &[usize]) -> R {
        let mut p = self.m1[path[0]];
        for t in 1..path.len() {
            p *= self.m[t - 1][path[t - 1]][path[t]];
        }
        p
    }

    pub fn path_potential(&self, path: &[usize]) -> R {
        path.iter().enumerate().fold(R::one(), |acc, (t, &z)| acc * self.g[t][z])
    }

    /// Unnormalized target density `M(path) * prod_t G_t(path_t)`.
    pub fn path_weight(&self, path: &[usize]) -> R {
        self.path_prior(path) * self.path_potential(path)
    }

    /// `G_{p,q}(z) = Q_{p,q}(1)(z)` for `0 <= p < q <= T+1` (1-based times).
    ///
    /// For `p = 0` the value does not depend on `z`; the returned vector repeats
    /// the scalar `G_{0,q} = M_1 Q_{1,q}(1)`.
    pub fn q_operator(&self, p: usize, q: usize) -> Result<Vec<R>> {
        let t_max = self.horizon();
        if p >= q || q > t_max + 1 {
            return Err(Error::IndexOutOfRange(format!("q_operator needs 0 <= p < q <= {}, got p={p}, q={q}", t_max + 1)));
        }
        let s = self.num_states();
        let mut v = vec![R::one(); s];
        let lo = p.max(1);
        for k in (lo..q).rev() {
            for (vz, &gz) in v.iter_mut().zip(&self.g[k - 1]) {
                *vz *= gz;
            }
            if k > lo {
                v = self.apply_transition(k, &v);
            }
        }
        if p == 0 {
            let scalar = self.m1.iter().zip(&v).map(|(&a, &b)| a * b).sum::<R>();
            return Ok(vec![scalar; s]);
        }
        Ok(v)
    }

    /// `G_{0,q}` as a scalar; `G_{0,T+1} = gamma_T`.
    pub fn gamma_0q(&self, q: usize) -> Result<R> {
        Ok(self.q_operator(0, q)?[0])
    }

    pub fn gamma(&self) -> R {
        self.gamma_0q(self.horizon() + 1).expect("valid horizon")
    }

    /// `(M_t h)(z) = sum_z' M_t(z, z') h(z')`.
    fn apply_transition(&self, t: usize, h: &[R]) -> Vec<R> {
        self.m[t - 2].iter().map(|row| row.iter().zip(h).map(|(&a, &b)| a * b).sum()).collect()
    }

    /// Predictive law `eta_p` for `p` in `1..=T`.
    pub fn eta(&self, p: usize) -> Result<Vec<R>> {
        if p == 0 || p > self.horizon() {
            return Err(Error::IndexOutOfRange(format!("eta_p needs 1 <= p <= {}, got {p}", self.horizon())));
        }
        let s = self.num_states();
        let mut eta = self.m1.clone();
        for t in 1..p {
            let w: Vec<R> = eta.iter().zip(&self.g[t - 1]).map(|(&a, &b)| a * b).collect();
            let total: R = w.iter().copied().sum();
            let mut next = vec![R::zero(); s];
            for (z, &wz) in w.iter().enumerate() {
                if wz > R::zero() {
                    for (u, nu) in next.iter_mut().enumerate() {
                        *nu += wz / total * self.m[t - 1][z][u];
                    }
                }
            }
            eta = next;
        }
        Ok(eta)
    }

    /// Target marginal `pi_t` for `t` in `1..=T`, from `pi_t(z) ∝ eta_t(z) G_{t,T+1}(z)`.
    pub fn marginal(&self, t: usize) -> Vec<R> {
        let eta = self.eta(t).expect("t in range");
        let back = self.q_operator(t, self.horizon() + 1).expect("t in range");
        let w: Vec<R> = eta.iter().zip(&back).map(|(&a, &b)| a * b).collect();
        let total: R = w.iter().copied().sum();
        w.iter().map(|&v| v / total).collect()
    }

    /// Largest potential at time `t` over all states.
    pub fn sup_potential(&self, t: usize) -> R {
        self.g[t - 1].iter().copied().fold(R::zero(), R::max)
    }

    pub fn to_spec(&self) -> ModelSpec {
        ModelSpec {
            horizon: self.horizon(),
            alphabet: self.alphabet.clone(),
            m1: self.m1.iter().map(|v| v.to_f64_lossy()).collect(),
            m: self.m.iter().map(|mt| mt.iter().map(|r| r.iter().map(|v| v.to_f64_lossy()).collect()).collect()).collect(),
            g: self.g.iter().map(|gt| gt.iter().map(|v| v.to_f64_lossy()).collect()).collect(),
        }
    }

    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        if spec.g.len() != spec.horizon {
            return Err(Error::DimensionMismatch(format!("T = {} but {} potentials given", spec.horizon, spec.g.len())));
        }
        let cv = |xs: &[f64]| xs.iter().map(|&v| R::of(v)).collect::<Vec<R>>();
        Self::new(
            spec.alphabet.clone(),
            cv(&spec.m1),
            spec.m.iter().map(|mt| mt.iter().map(|r| cv(r)).collect()).collect(),
            spec.g.iter().map(|gt| cv(gt)).collect(),
        )
    }
}

impl<R: Real> FeynmanKacModel<R> for DiscreteFk<R> {
    type State = usize;

    fn horizon(&self) -> usize {
        self.g.len()
    }

    fn sample_initial<G: Rng + ?Sized>(&self, rng: &mut G) -> usize {
        draw_cumulative(&self.cum_m1, rng)
    }

    fn sample_transition<G: Rng + ?Sized>(&self, time: usize, prev: &usize, rng: &mut G) -> usize {
        draw_cumulative(&self.cum_m[time - 1][*prev], rng)
    }

    fn log_potential(&self, time: usize, state: &usize) -> R {
        self.log_g[time][*state]
    }
}

/// On-disk model description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub alphabet: Vec<String>,
    pub m1: Vec<f64>,
    pub m: Vec<Vec<Vec<f64>>>,
    pub g: Vec<Vec<f64>>,
}

impl ModelSpec {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model spec serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Exact target law over paths with positive probability.
#[derive(Clone, Debug)]
pub struct TargetLaw<R: Real = f64> {
    paths: Vec<Vec<usize>>,
    probs: Vec<R>,
    index: HashMap<Vec<usize>, usize>,
    gamma: R,
}

impl<R: Real> TargetLaw<R> {
    /// Support paths in lexicographic order.
    pub fn paths(&self) -> &[Vec<usize>] {
        &self.paths
    }

    pub fn probs(&self) -> &[R] {
        &self.probs
    }

    pub fn gamma(&self) -> R {
        self.gamma
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn index_of(&self, path: &[usize]) -> Option<usize> {
        self.index.get(path).copied()
    }

    /// `pi(path)`, zero off the support.
    pub fn prob(&self, path: &[usize]) -> R {
        self.index_of(path).map_or(R::zero(), |i| self.probs[i])
    }

    /// Marginal `pi_t` for `t` in `1..=T`.
    pub fn marginal(&self, t: usize, num_states: usize) -> Vec<R> {
        let mut out = vec![R::zero(); num_states];
        for (p, &w) in self.paths.iter().zip(&self.probs) {
            out[p[t - 1]] += w;
        }
        out
    }
}

/// Enumerates `pi` over all paths, pruning zero-weight prefixes.
pub fn exact_target<R: Real>(model: &DiscreteFk<R>) -> Result<TargetLaw<R>> {
    let s = model.num_states();
    let t = model.horizon();
    let size = (s as f64).powi(t as i32);
    if size > PATH_SPACE_LIMIT {
        return Err(Error::PathSpaceTooLarge { size, limit: PATH_SPACE_LIMIT });
    }
    let mut paths = Vec::new();
    let mut weights = Vec::new();
    let mut prefix = Vec::with_capacity(t);

    fn dfs<R: Real>(model: &DiscreteFk<R>, prefix: &mut Vec<usize>, w: R, paths: &mut Vec<Vec<usize>>, weights: &mut Vec<R>) {
        let depth = prefix.len();
        if depth == model.horizon() {
            paths.push(prefix.clone());
            weights.push(w);
            return;
        }
        for z in 0..model.num_states() {
            let step = if depth == 0 { model.m1[z] } else { model.m[depth - 1][prefix[depth - 1]][z] };
            let next = w * step * model.g[depth][z];
            if next > R::zero() {
                prefix.push(z);
                dfs(model, prefix, next, paths, weights);
                prefix.pop();
            }
        }
    }

    dfs(model, &mut prefix, R::one(), &mut paths, &mut weights);
    let mut acc = KahanSum::new();
    for &w in &weights {
        acc.add(w);
    }
    let gamma = acc.value();
    if gamma <= R::zero() {
        return Err(Error::ZeroNormalizingConstant);
    }
    let probs = weights.iter().map(|&w| w / gamma).collect();
    let index = paths.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
    Ok(TargetLaw { paths, probs, index, gamma })
}

/// Largest `G_t` over states carrying `pi_t` mass above `1e-15`.
pub fn ess_sup_potential<R: Real>(model: &DiscreteFk<R>, t: usize) -> R {
    let marg = model.marginal(t);
    let floor = R::of(1e-15);
    model.potential(t).iter().zip(&marg).filter(|(_, &m)| m > floor).map(|(&g, _)| g).fold(R::zero(), R::max)
}

/// Reads and validates a model file.
pub fn load_model(path: &Path) -> Result<DiscreteFk<f64>> {
    let spec = ModelSpec::load(path).map_err(|e| match e {
        Error::Json(j) => Error::ModelValidation(format!("{}: {j}", path.display())),
        other => other,
    })?;
    DiscreteFk::from_spec(&spec).map_err(|e| Error::ModelValidation(format!("{}: {e}", path.display())))
}
