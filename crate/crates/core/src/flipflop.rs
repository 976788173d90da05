//! Expected sufficient statistics and the flip-flop update shared by every
//! structured estimator.
//!
//! A group of `n` observations is summarized by the scatter of its
//! (completed) residuals `Σᵢ vec(Eᵢ) vec(Eᵢ)ᵀ` plus, for observations with
//! missing cells, the conditional covariance of those cells. One pass
//! maximizes the (expected) log-likelihood over `Σ_c` given `Σ_s`, then over
//! `Σ_s` given `Σ_c`, rescales both to a unit top-left entry and sets `σ²` to
//! its maximizer given the new shapes. Several groups may share one `Σ_s`
//! while keeping their own `Σ_c` and `σ²`.

use std::f64::consts::PI;

use log::warn;

use crate::error::{Error, Result};
use crate::linalg::{rel_frobenius, DenseMatrix, SpdMatrix};
use crate::missing::{col_mask_contribution, row_mask_contribution, scale_mask_contribution, ObsPattern};

pub(crate) struct KronStats<'a> {
    p: usize,
    q: usize,
    n: usize,
    scatter: DenseMatrix,
    cond: Vec<(&'a ObsPattern, DenseMatrix)>,
}

impl<'a> KronStats<'a> {
    pub fn new(p: usize, q: usize) -> Self {
        Self { p, q, n: 0, scatter: DenseMatrix::zeros(p * q, p * q), cond: Vec::new() }
    }

    /// Adds one observation: its residual about the group mean and, when it
    /// has missing cells, their conditional covariance.
    pub fn push(&mut self, residual: &DenseMatrix, cond: Option<(&'a ObsPattern, DenseMatrix)>) {
        let e = nalgebra::DVector::from_column_slice(residual.as_slice());
        self.scatter.ger(1.0, &e, &e, 1.0);
        if let Some(c) = cond {
            self.cond.push(c);
        }
        self.n += 1;
    }

    /// `Σᵢ E[(Xᵢ−μ)ᵀ B (Xᵢ−μ)]`, a `q × q` matrix.
    pub fn col_moment(&self, b: &DenseMatrix) -> DenseMatrix {
        let (p, q) = (self.p, self.q);
        let mut g = DenseMatrix::from_fn(q, q, |k, l| {
            self.scatter.view((k * p, l * p), (p, p)).dot(b)
        });
        for (pat, cov) in &self.cond {
            g += col_mask_contribution(pat, cov, b);
        }
        g
    }

    /// `Σᵢ E[(Xᵢ−μ) A (Xᵢ−μ)ᵀ]`, a `p × p` matrix.
    pub fn row_moment(&self, a: &DenseMatrix) -> DenseMatrix {
        let (p, q) = (self.p, self.q);
        let mut h = DenseMatrix::zeros(p, p);
        for k in 0..q {
            for l in 0..q {
                let w = a[(k, l)];
                if w != 0.0 {
                    h += self.scatter.view((k * p, l * p), (p, p)) * w;
                }
            }
        }
        for (pat, cov) in &self.cond {
            h += row_mask_contribution(pat, cov, a);
        }
        h
    }

    /// `Σᵢ E[vec(Xᵢ−μ)ᵀ (A ⊗ B) vec(Xᵢ−μ)]`.
    pub fn quad(&self, a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        let (p, q) = (self.p, self.q);
        let mut total = 0.0;
        for k in 0..q {
            for l in 0..q {
                total += a[(k, l)] * self.scatter.view((k * p, l * p), (p, p)).dot(b);
            }
        }
        total + self.cond.iter().map(|(pat, cov)| scale_mask_contribution(pat, cov, a, b)).sum::<f64>()
    }
}

/// Per-group column covariance and scale.
#[derive(Clone, Debug)]
pub(crate) struct GroupFactor {
    pub sigma_c: SpdMatrix,
    pub sigma2: f64,
}

pub(crate) fn spd_with_jitter(m: DenseMatrix, jitter: f64, what: &str) -> Result<SpdMatrix> {
    match SpdMatrix::new(m.clone()) {
        Ok(s) => Ok(s),
        Err(_) => {
            let n = m.nrows();
            let mean_diag = m.diagonal().iter().map(|d| d.abs()).sum::<f64>() / n as f64;
            let scale = if mean_diag > 0.0 && mean_diag.is_finite() { mean_diag } else { 1.0 };
            let eps = jitter * scale;
            warn!("{what} update is not positive definite; adding {eps:e} to the diagonal");
            SpdMatrix::new(m + DenseMatrix::identity(n, n) * eps)
                .map_err(|_| Error::Singular(format!("{what} update is singular even after jitter")))
        }
    }
}

/// One flip-flop pass over groups sharing `Σ_s`.
pub(crate) fn flip_flop_pass(
    groups: &[KronStats<'_>],
    sigma_s: &SpdMatrix,
    jitter: f64,
) -> Result<(SpdMatrix, Vec<GroupFactor>)> {
    let p = sigma_s.dim();
    let q = groups[0].q;
    let s_inv = sigma_s.inverse()?.into_matrix();

    let mut raw_c = Vec::with_capacity(groups.len());
    for g in groups {
        let m = g.col_moment(&s_inv) / (p * g.n) as f64;
        raw_c.push(spd_with_jitter(m, jitter, "column covariance")?);
    }
    let total_n: usize = groups.iter().map(|g| g.n).sum();
    let mut row_sum = DenseMatrix::zeros(p, p);
    for (g, c) in groups.iter().zip(&raw_c) {
        row_sum += g.row_moment(c.inverse()?.as_matrix());
    }
    let raw_s = spd_with_jitter(row_sum / (q * total_n) as f64, jitter, "row covariance")?;

    let (new_s, _) = raw_s.normalized()?;
    let s_inv = new_s.inverse()?.into_matrix();
    let mut factors = Vec::with_capacity(groups.len());
    for (g, c) in groups.iter().zip(raw_c) {
        let (sigma_c, _) = c.normalized()?;
        let sigma2 = g.quad(sigma_c.inverse()?.as_matrix(), &s_inv) / (p * q * g.n) as f64;
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::Singular(format!("variance scale estimate is {sigma2}")));
        }
        factors.push(GroupFactor { sigma_c, sigma2 });
    }
    Ok((new_s, factors))
}

/// Largest relative change between two sets of covariance factors.
pub(crate) fn factor_change(
    s_new: &SpdMatrix,
    f_new: &[GroupFactor],
    s_old: &SpdMatrix,
    f_old: &[GroupFactor],
) -> f64 {
    let mut change = rel_frobenius(s_new.as_matrix(), s_old.as_matrix());
    for (a, b) in f_new.iter().zip(f_old) {
        change = change
            .max(rel_frobenius(a.sigma_c.as_matrix(), b.sigma_c.as_matrix()))
            .max((a.sigma2 - b.sigma2).abs() / b.sigma2);
    }
    change
}

/// Expected complete-data log-likelihood of the groups at the given factors,
/// with each group's residuals taken about the mean the statistics were
/// built with.
pub(crate) fn expected_log_likelihood(
    groups: &[KronStats<'_>],
    sigma_s: &SpdMatrix,
    factors: &[GroupFactor],
) -> Result<f64> {
    let p = sigma_s.dim() as f64;
    let s_inv = sigma_s.inverse()?.into_matrix();
    let log_det_s = sigma_s.log_det();
    let mut ll = 0.0;
    for (g, f) in groups.iter().zip(factors) {
        let q = g.q as f64;
        let n = g.n as f64;
        let quad = g.quad(f.sigma_c.inverse()?.as_matrix(), &s_inv);
        ll += -0.5 * p * q * n * (2.0 * PI * f.sigma2).ln()
            - 0.5 * p * n * f.sigma_c.log_det()
            - 0.5 * q * n * log_det_s
            - 0.5 * quad / f.sigma2;
    }
    Ok(ll)
}

pub(crate) fn rel_change(new: f64, old: f64) -> f64 {
    (new - old).abs() / old.abs().max(f64::MIN_POSITIVE)
}
