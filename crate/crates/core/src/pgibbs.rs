//! Joint parameter/path targets: the exact Gibbs and particle Gibbs kernels,
//! the comparison constant `rho`, the inequality surface relating them, and
//! the particle Gibbs, PIMH and PMMH samplers.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{epsilon_bounded_from_ratio, epsilon_mixing_value};
use crate::c2smc::alpha_constant;
use crate::csmc::{icsmc_step, select_path};
use crate::error::{Error, Result};
use crate::fk_model::{ess_sup_potential, exact_target, DiscreteFk, ModelSpec, TargetLaw};
use crate::oracle::{
    asymptotic_variance_general, dirichlet_form, exact_asymptotic_variance, exact_minorization, exact_pn_matrix_with, iid_chain, inner,
    mean_under, spectral_summary, variance_under, FiniteChain,
};
use crate::rng::Streams;
use crate::scalar::Real;
use crate::smc::{gamma_hat, run_smc};
use crate::trajectory::Trajectory;

pub const JOINT_STATE_LIMIT: usize = 10_000;

/// `pi(theta, x) ∝ prior(theta) M_theta(x) prod_t G_{theta,t}(x_t)` over a finite `Theta`.
#[derive(Clone, Debug)]
pub struct JointModel<R: Real = f64> {
    thetas: Vec<String>,
    prior: Vec<R>,
    models: Vec<DiscreteFk<R>>,
    targets: Vec<TargetLaw<R>>,
    paths: Vec<Vec<usize>>,
    /// `joint[j][i] = pi(theta_j, paths[i])`.
    joint: Vec<Vec<R>>,
}

impl<R: Real> JointModel<R> {
    pub fn new(thetas: Vec<String>, prior: Vec<R>, models: Vec<DiscreteFk<R>>) -> Result<Self> {
        let j = thetas.len();
        if j == 0 || prior.len() != j || models.len() != j {
            return Err(Error::DimensionMismatch(format!("{j} thetas, {} prior entries, {} models", prior.len(), models.len())));
        }
        let (t, s) = (models[0].horizon(), models[0].num_states());
        if models.iter().any(|m| m.horizon() != t || m.num_states() != s) {
            return Err(Error::DimensionMismatch("all models must share T and the state alphabet".into()));
        }
        if prior.iter().any(|&p| p < R::zero()) {
            return Err(Error::NegativeProbability { table: "prior".into(), row: 0 });
        }
        let psum: R = prior.iter().copied().sum();
        if (psum - R::one()).abs().to_f64_lossy() > 1e-9 {
            return Err(Error::NonStochasticRow { table: "prior".into(), row: 0, sum: psum.to_f64_lossy() });
        }
        let targets: Vec<TargetLaw<R>> = models.iter().map(exact_target).collect::<Result<_>>()?;
        let paths: Vec<Vec<usize>> =
            targets.iter().flat_map(|tg| tg.paths().iter().cloned()).collect::<BTreeSet<_>>().into_iter().collect();
        if paths.len() * j > JOINT_STATE_LIMIT {
            return Err(Error::StateSpaceTooLarge { size: paths.len() * j, limit: JOINT_STATE_LIMIT });
        }
        let mass: Vec<R> = prior.iter().zip(&targets).map(|(&p, tg)| p * tg.gamma()).collect();
        let z: R = mass.iter().copied().sum();
        if z <= R::zero() {
            return Err(Error::ZeroNormalizingConstant);
        }
        let joint = targets.iter().zip(&mass).map(|(tg, &w)| paths.iter().map(|p| w / z * tg.prob(p)).collect()).collect();
        Ok(Self { thetas, prior, models, targets, paths, joint })
    }

    pub fn num_thetas(&self) -> usize {
        self.thetas.len()
    }

    pub fn thetas(&self) -> &[String] {
        &self.thetas
    }

    pub fn prior(&self) -> &[R] {
        &self.prior
    }

    pub fn model(&self, j: usize) -> &DiscreteFk<R> {
        &self.models[j]
    }

    pub fn target(&self, j: usize) -> &TargetLaw<R> {
        &self.targets[j]
    }

    /// Union of the per-parameter supports, in lexicographic order.
    pub fn paths(&self) -> &[Vec<usize>] {
        &self.paths
    }

    pub fn path_index(&self, path: &[usize]) -> Option<usize> {
        self.paths.binary_search_by(|p| p.as_slice().cmp(path)).ok()
    }

    pub fn joint(&self, j: usize, i: usize) -> R {
        self.joint[j][i]
    }

    pub fn theta_marginal(&self) -> Vec<R> {
        self.joint.iter().map(|row| row.iter().copied().sum()).collect()
    }

    pub fn path_marginal(&self) -> Vec<R> {
        (0..self.paths.len()).map(|i| self.joint.iter().map(|row| row[i]).sum()).collect()
    }

    /// `pi_x(theta)` for path index `i`.
    pub fn theta_given_path(&self, i: usize) -> Vec<R> {
        let col: Vec<R> = self.joint.iter().map(|row| row[i]).collect();
        let total: R = col.iter().copied().sum();
        col.iter().map(|&v| v / total).collect()
    }

    /// `pi_theta` on the union of supports.
    pub fn path_given_theta(&self, j: usize) -> Vec<R> {
        self.paths.iter().map(|p| self.targets[j].prob(p)).collect()
    }

    /// Joint states `(theta index, path index)` with positive mass, theta-major.
    pub fn joint_states(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.num_thetas() {
            for i in 0..self.paths.len() {
                if self.joint[j][i] > R::zero() {
                    out.push((j, i));
                }
            }
        }
        out
    }

    pub fn to_spec(&self) -> JointSpec {
        JointSpec {
            thetas: self.thetas.clone(),
            prior: self.prior.iter().map(|v| v.to_f64_lossy()).collect(),
            models: self.models.iter().map(|m| m.to_spec()).collect(),
        }
    }

    pub fn from_spec(spec: &JointSpec) -> Result<Self> {
        let models = spec.models.iter().map(DiscreteFk::from_spec).collect::<Result<_>>()?;
        Self::new(spec.thetas.clone(), spec.prior.iter().map(|&v| R::of(v)).collect(), models)
    }
}

/// On-disk joint model description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub thetas: Vec<String>,
    pub prior: Vec<f64>,
    pub models: Vec<ModelSpec>,
}

pub fn load_joint_model(path: &Path) -> Result<JointModel<f64>> {
    let text = std::fs::read_to_string(path)?;
    let spec: JointSpec = serde_json::from_str(&text).map_err(|e| Error::ModelValidation(format!("{}: {e}", path.display())))?;
    JointModel::from_spec(&spec).map_err(|e| Error::ModelValidation(format!("{}: {e}", path.display())))
}

fn joint_label(j: usize, path: &[usize]) -> Vec<usize> {
    std::iter::once(j).chain(path.iter().copied()).collect()
}

/// Conditional kernels `Pi_theta` mapped onto the union path space.
fn embed<R: Real>(jm: &JointModel<R>, kernels: &[FiniteChain<R>]) -> Result<Vec<DMatrix<R>>> {
    if kernels.len() != jm.num_thetas() {
        return Err(Error::DimensionMismatch("one conditional kernel per theta required".into()));
    }
    let k = jm.paths().len();
    kernels
        .iter()
        .map(|c| {
            let idx: Vec<usize> = c
                .states
                .iter()
                .map(|s| jm.path_index(s).ok_or_else(|| Error::IndexOutOfRange("kernel state outside the joint support".into())))
                .collect::<Result<_>>()?;
            let mut m = DMatrix::from_element(k, k, R::zero());
            for (a, &ia) in idx.iter().enumerate() {
                for (b, &ib) in idx.iter().enumerate() {
                    m[(ia, ib)] = c.kernel[(a, b)];
                }
            }
            Ok(m)
        })
        .collect()
}

/// Metropolis-within-Gibbs kernels built from conditional kernels `Pi_theta`:
/// the joint chain and its path marginal.
pub fn mwg_matrices<R: Real>(jm: &JointModel<R>, kernels: &[FiniteChain<R>]) -> Result<(FiniteChain<R>, FiniteChain<R>)> {
    let emb = embed(jm, kernels)?;
    let k = jm.paths().len();
    let cond: Vec<Vec<R>> = (0..k).map(|i| jm.theta_given_path(i)).collect();
    let states = jm.joint_states();
    let joint_kernel = DMatrix::from_fn(states.len(), states.len(), |a, b| {
        let (_, x) = states[a];
        let (v, y) = states[b];
        cond[x][v] * emb[v][(x, y)]
    });
    let joint_pi = DVector::from_iterator(states.len(), states.iter().map(|&(j, i)| jm.joint(j, i)));
    let labels = states.iter().map(|&(j, i)| joint_label(j, &jm.paths()[i])).collect();
    let full = FiniteChain::new(labels, joint_kernel, joint_pi)?;
    let path_kernel = DMatrix::from_fn(k, k, |x, y| (0..jm.num_thetas()).map(|v| cond[x][v] * emb[v][(x, y)]).sum());
    let marginal = FiniteChain::new(jm.paths().to_vec(), path_kernel, DVector::from_vec(jm.path_marginal()))?;
    Ok((full, marginal))
}

/// Exact-conditional kernels `pi_theta` (the Gibbs sampler's path update).
pub fn exact_conditional_kernels<R: Real>(jm: &JointModel<R>) -> Result<Vec<FiniteChain<R>>> {
    (0..jm.num_thetas()).map(|j| iid_chain(jm.target(j).paths().to_vec(), jm.target(j).probs())).collect()
}

/// i-cSMC kernels `P_{N,theta}` for every parameter value.
pub fn csmc_kernels<R: Real>(jm: &JointModel<R>, n: usize) -> Result<Vec<FiniteChain<R>>> {
    (0..jm.num_thetas())
        .into_par_iter()
        .map(|j| exact_pn_matrix_with(jm.model(j), jm.target(j), n, &vec![0; jm.model(j).horizon()]))
        .collect()
}

/// The two-stage Gibbs kernel and its path marginal.
pub fn exact_gibbs_matrices<R: Real>(jm: &JointModel<R>) -> Result<(FiniteChain<R>, FiniteChain<R>)> {
    mwg_matrices(jm, &exact_conditional_kernels(jm)?)
}

/// The particle Gibbs kernel with `N` particles and its path marginal.
pub fn exact_phi_matrices<R: Real>(jm: &JointModel<R>, n: usize) -> Result<(FiniteChain<R>, FiniteChain<R>)> {
    mwg_matrices(jm, &csmc_kernels(jm, n)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RhoEstimate {
    pub rho_exact: f64,
    pub rho_lower: f64,
}

pub const RANK_TOL: f64 = 1e-12;

/// `rho = inf_f sum_theta pi(theta) Gap_theta var_theta(f) / sum_theta pi(theta) var_theta(f)`,
/// the smallest generalized eigenvalue of the two covariance forms on the range of the second.
pub fn rho_from_kernels<R: Real>(jm: &JointModel<R>, kernels: &[FiniteChain<R>]) -> Result<RhoEstimate> {
    let gaps: Vec<f64> = kernels.iter().map(|c| spectral_summary(c).map(|s| s.gap_right)).collect::<Result<_>>()?;
    let k = jm.paths().len();
    let weights = jm.theta_marginal();
    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut b = DMatrix::<f64>::zeros(k, k);
    for (j, &gap) in gaps.iter().enumerate() {
        let p: Vec<f64> = jm.path_given_theta(j).iter().map(|v| v.to_f64_lossy()).collect();
        let w = weights[j].to_f64_lossy();
        let cov = DMatrix::from_fn(k, k, |x, y| if x == y { p[x] - p[x] * p[x] } else { -p[x] * p[y] });
        b += &cov * w;
        a += &cov * (w * gap);
    }
    let eig = b.clone().symmetric_eigen();
    let top = eig.eigenvalues.max().max(0.0);
    let keep: Vec<usize> = (0..k).filter(|&i| eig.eigenvalues[i] > RANK_TOL * top.max(1.0)).collect();
    if keep.is_empty() {
        return Err(Error::DegenerateB);
    }
    let whiten = DMatrix::from_fn(k, keep.len(), |r, c| eig.eigenvectors[(r, keep[c])] / eig.eigenvalues[keep[c]].sqrt());
    let m = whiten.transpose() * a * &whiten;
    let m = (&m + m.transpose()) * 0.5;
    let rho_exact = m.symmetric_eigenvalues().min();
    let rho_lower = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(RhoEstimate { rho_exact, rho_lower })
}

pub fn rho_constants<R: Real>(jm: &JointModel<R>, n: usize) -> Result<RhoEstimate> {
    rho_from_kernels(jm, &csmc_kernels(jm, n)?)
}

/// One inequality `lhs <= rhs` (or equality within tolerance) with the function it was evaluated at.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub witness: String,
    pub lhs: f64,
    pub rhs: f64,
    pub tolerance: f64,
    pub equality: bool,
}

impl CheckRow {
    pub fn holds(&self) -> bool {
        if self.equality {
            (self.lhs - self.rhs).abs() <= self.tolerance
        } else {
            self.lhs <= self.rhs + self.tolerance
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct CheckReport {
    pub rows: Vec<CheckRow>,
}

impl CheckReport {
    fn le(&mut self, name: &str, witness: &str, lhs: f64, rhs: f64, tolerance: f64) {
        self.rows.push(CheckRow { name: name.into(), witness: witness.into(), lhs, rhs, tolerance, equality: false });
    }

    fn eq(&mut self, name: &str, witness: &str, lhs: f64, rhs: f64, tolerance: f64) {
        self.rows.push(CheckRow { name: name.into(), witness: witness.into(), lhs, rhs, tolerance, equality: true });
    }

    pub fn failures(&self) -> Vec<&CheckRow> {
        self.rows.iter().filter(|r| !r.holds()).collect()
    }

    pub fn all_hold(&self) -> bool {
        self.rows.iter().all(CheckRow::holds)
    }

    /// Turns the first violated row into an error.
    pub fn into_result(self) -> Result<Self> {
        match self.rows.iter().find(|r| !r.holds()) {
            None => Ok(self),
            Some(r) => Err(Error::AssertionFailure {
                check: format!("{}: {} {} {}", r.name, r.lhs, if r.equality { "==" } else { "<=" }, r.rhs),
                witness: r.witness.clone(),
            }),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("check,witness,lhs,rhs,tolerance,holds\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.name, r.witness, r.lhs, r.rhs, r.tolerance, r.holds());
        }
        s
    }
}

fn basis(k: usize, i: usize) -> Vec<f64> {
    (0..k).map(|j| if j == i { 1.0 } else { 0.0 }).collect()
}

fn chain_f64<R: Real>(c: &FiniteChain<R>) -> FiniteChain<f64> {
    FiniteChain { states: c.states.clone(), kernel: c.kernel.map(|v| v.to_f64_lossy()), stationary: c.stationary.map(|v| v.to_f64_lossy()) }
}

/// Every inequality relating the Gibbs and particle Gibbs path chains, evaluated
/// on the indicator of each path.
pub fn evaluate_path_chain<R: Real>(jm: &JointModel<R>, kernels: &[FiniteChain<R>], slack: f64) -> Result<(CheckReport, RhoEstimate)> {
    let (_, gx) = mwg_matrices(jm, &exact_conditional_kernels(jm)?)?;
    let (_, px) = mwg_matrices(jm, kernels)?;
    let (gx, px) = (chain_f64(&gx), chain_f64(&px));
    let rho = rho_from_kernels(jm, kernels)?;
    let r = rho.rho_exact;
    let mut rep = CheckReport::default();
    rep.le("rho_lower<=rho_exact", "-", rho.rho_lower, r, slack);

    let sg = spectral_summary(&gx)?;
    let sp = spectral_summary(&px)?;
    rep.le("gap_phi<=2gap_gamma", "-", sp.gap_right, 2.0 * sg.gap_right, slack);
    rep.le("rho*gap_gamma<=gap_phi", "-", r * sg.gap_right, sp.gap_right, slack);

    let eps = kernels.iter().map(|c| exact_minorization(c).to_f64_lossy()).fold(f64::INFINITY, f64::min);
    let all_positive = kernels.iter().map(spectral_summary).collect::<Result<Vec<_>>>()?.iter().all(|s| s.is_positive);
    let pi = gx.stationary.as_slice().to_vec();
    let k = pi.len();
    for i in 0..k {
        let f = basis(k, i);
        let w = format!("1{{x={:?}}}", jm.paths()[i]);
        let eg = dirichlet_form(&gx, &f);
        let ep = dirichlet_form(&px, &f);
        rep.le("dirichlet_phi<=2dirichlet_gamma", &w, ep, 2.0 * eg, slack);
        rep.le("rho*dirichlet_gamma<=dirichlet_phi", &w, r * eg, ep, slack);
        let vpi = variance_under(&pi, &f);
        let vg = exact_asymptotic_variance(&gx, &f)?;
        let vp = exact_asymptotic_variance(&px, &f)?;
        rep.le("0<=(var_gamma-var_pi)/2", &w, 0.0, (vg - vpi) / 2.0, slack);
        rep.le("(var_gamma-var_pi)/2<=var_phi", &w, (vg - vpi) / 2.0, vp, slack);
        if r > 0.0 {
            rep.le("var_phi<=(1/rho-1)var_pi+var_gamma/rho", &w, vp, (1.0 / r - 1.0) * vpi + vg / r, slack);
        }
        if eps > 0.0 {
            rep.le("(var_gamma-(1-eps)var_pi)/(2-eps)<=var_phi", &w, (vg - (1.0 - eps) * vpi) / (2.0 - eps), vp, slack);
        }
        if all_positive {
            rep.le("var_gamma<=var_phi", &w, vg, vp, slack);
        }
    }
    Ok((rep, rho))
}

/// [`evaluate_path_chain`] for the i-cSMC conditional kernels, failing on the first violation.
pub fn path_chain_checks<R: Real>(jm: &JointModel<R>, n: usize) -> Result<(CheckReport, RhoEstimate)> {
    let (rep, rho) = evaluate_path_chain(jm, &csmc_kernels(jm, n)?, 1e-9)?;
    Ok((rep.into_result()?, rho))
}

/// Identities and bounds for functions of the parameter alone under the
/// particle Gibbs joint chain, plus the lower bounds on `rho` from the
/// uniform-in-parameter constants.
pub fn evaluate_theta_chain<R: Real>(jm: &JointModel<R>, n: usize, f_theta: &[f64]) -> Result<CheckReport> {
    if f_theta.len() != jm.num_thetas() {
        return Err(Error::DimensionMismatch("f_theta needs one value per theta".into()));
    }
    let kernels = csmc_kernels(jm, n)?;
    let (phi, phix) = mwg_matrices(jm, &kernels)?;
    let (gam, gamx) = exact_gibbs_matrices(jm)?;
    let (phi, phix, gam, gamx) = (chain_f64(&phi), chain_f64(&phix), chain_f64(&gam), chain_f64(&gamx));
    let rho = rho_from_kernels(jm, &kernels)?.rho_exact;

    let states = jm.joint_states();
    let f: Vec<f64> = states.iter().map(|&(j, _)| f_theta[j]).collect();
    let fbar: Vec<f64> =
        (0..jm.paths().len()).map(|i| jm.theta_given_path(i).iter().zip(f_theta).map(|(p, v)| p.to_f64_lossy() * v).sum()).collect();
    let pi = phi.stationary.as_slice().to_vec();
    let pix = phix.stationary.as_slice().to_vec();
    let (mf, mfb) = (mean_under(&pi, &f), mean_under(&pix, &fbar));
    let fc: Vec<f64> = f.iter().map(|v| v - mf).collect();
    let fbc: Vec<f64> = fbar.iter().map(|v| v - mfb).collect();
    let mut rep = CheckReport::default();
    let w = format!("f_theta={f_theta:?}");

    let mut phik = DVector::from_vec(fc.clone());
    let mut phixk = DVector::from_vec(fbc.clone());
    for k in 1..=10 {
        phik = &phi.kernel * phik;
        if k > 1 {
            phixk = &phix.kernel * phixk;
        }
        rep.eq(
            &format!("<f,Phi^{k} f>=<fbar,Phi_x^{} fbar>", k - 1),
            &w,
            inner(&pi, &fc, phik.as_slice()),
            inner(&pix, &fbc, phixk.as_slice()),
            1e-10,
        );
    }
    // k-shift: Phi^{k+1}(theta, x0; f) - pi(f) = Phi_x^k(x0; fbar) - pi(fbar), from every start.
    let mut pk = DVector::from_vec(f.clone());
    pk = &phi.kernel * pk;
    let mut pxk = DVector::from_vec(fbar.clone());
    for k in 1..=10 {
        pk = &phi.kernel * pk;
        pxk = &phix.kernel * pxk;
        let worst = states.iter().enumerate().map(|(a, &(_, i))| ((pk[a] - mf) - (pxk[i] - mfb)).abs()).fold(0.0, f64::max);
        rep.eq(&format!("shift_k{k}"), &w, worst, 0.0, 1e-10);
    }

    let var_pi_f = variance_under(&pi, &f);
    let var_pi_fbar = variance_under(&pix, &fbar);
    let var_phi = asymptotic_variance_general(&phi, &f)?;
    let var_phix = exact_asymptotic_variance(&phix, &fbar)?;
    rep.eq("var(f,Phi)=var_pi(f)+var_pi(fbar)+var(fbar,Phi_x)", &w, var_phi, var_pi_f + var_pi_fbar + var_phix, 1e-9);
    let var_gam = asymptotic_variance_general(&gam, &f)?;
    let var_gamx = exact_asymptotic_variance(&gamx, &fbar)?;
    rep.eq("var(f,Gamma)=var_pi(f)+var_pi(fbar)+var(fbar,Gamma_x)", &w, var_gam, var_pi_f + var_pi_fbar + var_gamx, 1e-9);
    if rho > 0.0 {
        let mid = var_pi_f + var_pi_fbar / rho + var_gamx / rho;
        rep.le("var(f,Phi)<=var_pi(f)+(var_pi(fbar)+var(fbar,Gamma_x))/rho", &w, var_phi, mid, 1e-9);
        rep.le("...<=(1-1/rho)var_pi(f)+var(f,Gamma)/rho", &w, mid, (1.0 - 1.0 / rho) * var_pi_f + var_gam / rho, 1e-9);
    }
    let all_positive = kernels.iter().map(spectral_summary).collect::<Result<Vec<_>>>()?.iter().all(|s| s.is_positive);
    if all_positive {
        rep.le("var(f,Gamma)<=var(f,Phi)", &w, var_gam, var_phi, 1e-9);
    }

    let horizon = jm.model(0).horizon();
    let ratio = (0..jm.num_thetas())
        .map(|j| {
            let m = jm.model(j);
            (1..=horizon).map(|t| ess_sup_potential(m, t).to_f64_lossy()).product::<f64>() / m.gamma().to_f64_lossy()
        })
        .fold(0.0, f64::max);
    rep.le("eps_bounded<=rho", "-", epsilon_bounded_from_ratio(ratio, n, horizon), rho, 1e-9);
    let alpha = (0..jm.num_thetas()).map(|j| alpha_constant(jm.model(j)).to_f64_lossy()).fold(1.0, f64::max);
    rep.le("eps_mixing<=rho", "-", epsilon_mixing_value(alpha, n, horizon), rho, 1e-9);
    Ok(rep)
}

pub fn theta_chain_checks<R: Real>(jm: &JointModel<R>, n: usize, f_theta: &[f64]) -> Result<CheckReport> {
    evaluate_theta_chain(jm, n, f_theta)?.into_result()
}

/// `max_{theta,x} G_theta(x) / gamma_theta` for single-step joint models.
pub fn normalized_potential_sup<R: Real>(jm: &JointModel<R>) -> f64 {
    (0..jm.num_thetas())
        .map(|j| {
            let m = jm.model(j);
            m.sup_potential(1).to_f64_lossy() / m.gamma().to_f64_lossy()
        })
        .fold(0.0, f64::max)
}

fn draw_index<R: Real, G: Rng + ?Sized>(probs: &[R], rng: &mut G) -> usize {
    let u = R::of(rng.random::<f64>());
    let mut acc = R::zero();
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > R::zero()).unwrap_or(0)
}

const THETA_SLOT: u64 = u64::MAX - 2;

/// One particle Gibbs step: `theta' ~ pi_x`, then an i-cSMC move under `theta'`.
pub fn pgibbs_step<R: Real>(jm: &JointModel<R>, n: usize, x: &[usize], streams: &Streams) -> Result<(usize, Trajectory)> {
    let i = jm.path_index(x).ok_or_else(|| Error::IndexOutOfRange("path outside the joint support".into()))?;
    let theta = draw_index(&jm.theta_given_path(i), &mut streams.step_rng(THETA_SLOT));
    let (y, _) = icsmc_step(jm.model(theta), n, x, &streams.child(THETA_SLOT))?;
    Ok((theta, y))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PimhState<R> {
    pub path: Trajectory,
    pub log_gamma_hat: R,
}

impl<R: Real> PimhState<R> {
    /// Initializes from one standard SMC pass.
    pub fn init(model: &DiscreteFk<R>, n: usize, streams: &Streams) -> Result<Self> {
        let sys = run_smc(model, n, streams)?;
        Ok(Self { path: select_path(&sys), log_gamma_hat: gamma_hat(&sys)?.log_value })
    }
}

/// Independent MH with a fresh SMC pass as proposal; returns the new state and whether it moved.
pub fn pimh_step<R: Real>(model: &DiscreteFk<R>, n: usize, current: &PimhState<R>, streams: &Streams) -> Result<(PimhState<R>, bool)> {
    let prop = PimhState::init(model, n, streams)?;
    let log_u = R::of(streams.step_rng(THETA_SLOT).random::<f64>().ln());
    if log_u < prop.log_gamma_hat - current.log_gamma_hat {
        Ok((prop, true))
    } else {
        Ok((current.clone(), false))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PmmhState<R> {
    pub theta: usize,
    pub log_gamma_hat: R,
}

impl<R: Real> PmmhState<R> {
    pub fn init(jm: &JointModel<R>, theta: usize, n: usize, streams: &Streams) -> Result<Self> {
        let sys = run_smc(jm.model(theta), n, streams)?;
        Ok(Self { theta, log_gamma_hat: gamma_hat(&sys)?.log_value })
    }
}

/// Marginal MH on the parameter with SMC likelihood estimates; `q` is row-stochastic.
pub fn pmmh_step<R: Real>(
    jm: &JointModel<R>,
    n: usize,
    q: &[Vec<R>],
    current: &PmmhState<R>,
    streams: &Streams,
) -> Result<(PmmhState<R>, bool)> {
    let jn = jm.num_thetas();
    if q.len() != jn || q.iter().any(|r| r.len() != jn) {
        return Err(Error::DimensionMismatch("proposal must be J x J".into()));
    }
    let th = current.theta;
    let prop_theta = draw_index(&q[th], &mut streams.step_rng(THETA_SLOT));
    let prop = PmmhState::init(jm, prop_theta, n, &streams.child(THETA_SLOT))?;
    let log_ratio = jm.prior()[prop_theta].ln() + q[prop_theta][th].ln() + prop.log_gamma_hat
        - jm.prior()[th].ln()
        - q[th][prop_theta].ln()
        - current.log_gamma_hat;
    let log_u = R::of(streams.step_rng(THETA_SLOT - 1).random::<f64>().ln());
    if log_u < log_ratio {
        Ok((prop, true))
    } else {
        Ok((*current, false))
    }
}
