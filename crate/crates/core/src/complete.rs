//! Complete-data maximum likelihood: alternating (flip-flop) updates of the
//! column and row covariances with per-pass normalization and the closed-form
//! `σ²` estimate.

use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flipflop::{
    expected_log_likelihood, factor_change, flip_flop_pass, rel_change, GroupFactor, KronStats,
};
use crate::linalg::{rel_frobenius, DenseMatrix, SpdMatrix};
use crate::missing::{check_groups, GroupedFit};
use crate::model::{MatNormParams, ObservationSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Relative change of the monitored log-likelihood.
    pub tol: f64,
    /// Relative (Frobenius) change of the covariance factors.
    pub inner_tol: f64,
    /// Cap on flip-flop passes inside one EM M-step.
    pub max_inner_iters: usize,
    /// Diagonal jitter, relative to the mean diagonal, applied once to a
    /// singular covariance update.
    pub jitter: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { max_iters: 500, tol: 1e-8, inner_tol: 1e-10, max_inner_iters: 200, jitter: 1e-8 }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.max_inner_iters == 0 {
            return Err(Error::Invalid("iteration caps must be at least 1".into()));
        }
        if !(self.tol > 0.0) || !(self.inner_tol > 0.0) {
            return Err(Error::Invalid("tolerances must be positive".into()));
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::Invalid("jitter must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub params: MatNormParams,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    /// Seconds.
    pub wall_time: f64,
    pub converged: bool,
}

impl FitResult {
    pub fn final_loglik(&self) -> f64 {
        self.loglik_trace.last().copied().unwrap_or(f64::NAN)
    }
}

pub fn sample_mean(data: &ObservationSet) -> DenseMatrix {
    let sum = data.iter().fold(DenseMatrix::zeros(data.p(), data.q()), |acc, x| acc + x);
    sum / data.n() as f64
}

pub(crate) fn warn_if_not_unique(n: usize, p: usize, q: usize) {
    if n <= p.max(q) {
        warn!("N = {n} does not exceed max(p, q) = {}; the MLE may not be unique", p.max(q));
    }
}

/// Complete-data MLE of `(μ, Σ_s, Σ_c, σ²)` starting from identity shapes.
///
/// Each iteration is one `Σ_c` then `Σ_s` update followed by normalization
/// and the `σ²` update; the fit stops once both the relative log-likelihood
/// change is below `tol` and the factor change is below `inner_tol`.
pub fn fit_mle(data: &ObservationSet, cfg: &FitConfig) -> Result<FitResult> {
    data.require_complete()?;
    warn_if_not_unique(data.n(), data.p(), data.q());
    Ok(fit_complete_grouped(data, &[(0..data.n()).collect()], cfg)?.into_single())
}

/// [`fit_mle`] over groups sharing `Σ_s`. Every structured estimator runs
/// this on complete data, so all of them reduce to the MLE bit for bit.
pub(crate) fn fit_complete_grouped(data: &ObservationSet, groups: &[Vec<usize>], cfg: &FitConfig) -> Result<GroupedFit> {
    cfg.validate()?;
    data.require_complete()?;
    check_groups(data, groups)?;
    let (p, q) = (data.p(), data.q());
    let start = Instant::now();

    let mut mus = Vec::with_capacity(groups.len());
    let mut stats = Vec::with_capacity(groups.len());
    for members in groups {
        let mu = members.iter().fold(DenseMatrix::zeros(p, q), |acc, &i| acc + data.get(i)) / members.len() as f64;
        let mut st = KronStats::new(p, q);
        for &i in members {
            st.push(&(data.get(i) - &mu), None);
        }
        mus.push(mu);
        stats.push(st);
    }

    let mut sigma_s = SpdMatrix::identity(p);
    let mut factors: Vec<GroupFactor> =
        groups.iter().map(|_| GroupFactor { sigma_c: SpdMatrix::identity(q), sigma2: 1.0 }).collect();
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let (new_s, new_f) = flip_flop_pass(&stats, &sigma_s, cfg.jitter)?;
        let ll = expected_log_likelihood(&stats, &new_s, &new_f)?;
        let change = factor_change(&new_s, &new_f, &sigma_s, &factors);
        let ll_ok = trace.last().is_some_and(|&prev| rel_change(ll, prev) < cfg.tol);
        trace.push(ll);
        sigma_s = new_s;
        factors = new_f;
        iterations += 1;
        if ll_ok && change < cfg.inner_tol {
            converged = true;
            break;
        }
    }

    let params = mus
        .into_iter()
        .zip(factors)
        .map(|(mu, f)| MatNormParams::new(mu, sigma_s.clone(), f.sigma_c, f.sigma2))
        .collect::<Result<Vec<_>>>()?;
    Ok(GroupedFit {
        params,
        completions: data.observations().to_vec(),
        loglik_trace: trace,
        iterations,
        wall_time: start.elapsed().as_secs_f64(),
        converged,
    })
}

/// Largest relative distance between each parameter and its closed-form
/// re-estimate computed from `params`; zero exactly at a fixed point of the
/// MLE equations.
pub fn stationarity_residual(data: &ObservationSet, params: &MatNormParams) -> Result<f64> {
    data.require_complete()?;
    let (p, q, n) = (data.p(), data.q(), data.n() as f64);
    let mu = sample_mean(data);
    let prec = params.precision()?;

    let mut sc = DenseMatrix::zeros(q, q);
    let mut ss = DenseMatrix::zeros(p, p);
    let mut d = 0.0;
    for x in data.iter() {
        let e = x - params.mu();
        sc += e.transpose() * &prec.s_inv * &e;
        ss += &e * &prec.c_inv * e.transpose();
        d += prec.mahalanobis(&e);
    }
    let sc = SpdMatrix::new(sc / (p as f64 * n))?.normalized()?.0;
    let ss = SpdMatrix::new(ss / (q as f64 * n))?.normalized()?.0;
    let sigma2 = d / (p * q) as f64 / n;

    Ok([
        rel_frobenius(params.mu(), &mu),
        rel_frobenius(params.sigma_c().as_matrix(), sc.as_matrix()),
        rel_frobenius(params.sigma_s().as_matrix(), ss.as_matrix()),
        (params.sigma2() - sigma2).abs() / sigma2,
    ]
    .into_iter()
    .fold(0.0, f64::max))
}
