//! The matrix normal distribution under the scaled parameterization
//! `vec(X) ~ N(vec(μ), σ² Σ_c ⊗ Σ_s)` with `(Σ_s)₀₀ = (Σ_c)₀₀ = 1`.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, SpdMatrix};

/// Tolerance on the top-left normalization accepted by [`MatNormParams::new`].
pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct MatNormParams {
    mu: DenseMatrix,
    sigma_s: SpdMatrix,
    sigma_c: SpdMatrix,
    sigma2: f64,
}

impl MatNormParams {
    /// Validated constructor: shapes agree, `σ² > 0`, and both shape
    /// matrices carry a unit top-left entry.
    pub fn new(mu: DenseMatrix, sigma_s: SpdMatrix, sigma_c: SpdMatrix, sigma2: f64) -> Result<Self> {
        for (name, m) in [("sigma_s", &sigma_s), ("sigma_c", &sigma_c)] {
            if (m.get(0, 0) - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::Invalid(format!(
                    "{name}[0,0] must be 1, got {}",
                    m.get(0, 0)
                )));
            }
        }
        Self::new_unnormalized(mu, sigma_s, sigma_c, sigma2)
    }

    /// Like [`MatNormParams::new`] but without the top-left constraint. Only
    /// the product `σ² Σ_c ⊗ Σ_s` is identified, so this is meant for
    /// invariance checks and derived (e.g. projected) parameter sets.
    pub fn new_unnormalized(
        mu: DenseMatrix,
        sigma_s: SpdMatrix,
        sigma_c: SpdMatrix,
        sigma2: f64,
    ) -> Result<Self> {
        if sigma_s.dim() != mu.nrows() || sigma_c.dim() != mu.ncols() {
            return Err(Error::Dimension(format!(
                "mu is {}x{} but sigma_s is {0}x{0} and sigma_c is {1}x{1}",
                mu.nrows(),
                mu.ncols(),
            )));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::Invalid(format!("sigma2 must be positive, got {sigma2}")));
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("mu has non-finite entries".into()));
        }
        Ok(Self { mu, sigma_s, sigma_c, sigma2 })
    }

    /// Rescales arbitrary SPD factors into the normalized form; `σ²` absorbs
    /// both top-left entries.
    pub fn normalize(mu: DenseMatrix, sigma_s: &SpdMatrix, sigma_c: &SpdMatrix, sigma2: f64) -> Result<Self> {
        let (s, ks) = sigma_s.normalized()?;
        let (c, kc) = sigma_c.normalized()?;
        Self::new(mu, s, c, sigma2 * ks * kc)
    }

    pub fn p(&self) -> usize {
        self.mu.nrows()
    }

    pub fn q(&self) -> usize {
        self.mu.ncols()
    }

    pub fn mu(&self) -> &DenseMatrix {
        &self.mu
    }

    pub fn sigma_s(&self) -> &SpdMatrix {
        &self.sigma_s
    }

    pub fn sigma_c(&self) -> &SpdMatrix {
        &self.sigma_c
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// `σ² Σ_c ⊗ Σ_s`, the covariance of `vec(X)`.
    pub fn full_covariance(&self) -> DenseMatrix {
        self.sigma_c.as_matrix().kronecker(self.sigma_s.as_matrix()) * self.sigma2
    }

    pub(crate) fn precision(&self) -> Result<Precision> {
        Precision::new(&self.sigma_s, &self.sigma_c)
    }
}

/// Inverses and log-determinants of the two shape factors.
#[derive(Clone, Debug)]
pub(crate) struct Precision {
    pub s_inv: DenseMatrix,
    pub c_inv: DenseMatrix,
    pub log_det_s: f64,
    pub log_det_c: f64,
}

impl Precision {
    pub fn new(sigma_s: &SpdMatrix, sigma_c: &SpdMatrix) -> Result<Self> {
        Ok(Self {
            s_inv: sigma_s.inverse()?.into_matrix(),
            c_inv: sigma_c.inverse()?.into_matrix(),
            log_det_s: sigma_s.log_det(),
            log_det_c: sigma_c.log_det(),
        })
    }

    /// `tr[Σ_c⁻¹ Eᵀ Σ_s⁻¹ E]`.
    pub fn mahalanobis(&self, e: &DenseMatrix) -> f64 {
        e.dot(&(&self.s_inv * e * &self.c_inv))
    }
}

/// `N` matrix observations of a common shape. Missing entries are `NaN`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    p: usize,
    q: usize,
    obs: Vec<DenseMatrix>,
}

impl ObservationSet {
    pub fn new(p: usize, q: usize, obs: Vec<DenseMatrix>) -> Result<Self> {
        if p == 0 || q == 0 {
            return Err(Error::Dimension("p and q must be at least 1".into()));
        }
        if obs.is_empty() {
            return Err(Error::Invalid("observation set is empty".into()));
        }
        for (i, x) in obs.iter().enumerate() {
            if x.shape() != (p, q) {
                return Err(Error::Dimension(format!(
                    "observation {i} is {}x{}, expected {p}x{q}",
                    x.nrows(),
                    x.ncols()
                )));
            }
            if x.iter().any(|v| v.is_infinite()) {
                return Err(Error::Invalid(format!("observation {i} has an infinite entry")));
            }
            if x.iter().all(|v| v.is_nan()) {
                return Err(Error::Invalid(format!("observation {i} has no observed entries")));
            }
        }
        Ok(Self { p, q, obs })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n(&self) -> usize {
        self.obs.len()
    }

    pub fn get(&self, i: usize) -> &DenseMatrix {
        &self.obs[i]
    }

    pub fn observations(&self) -> &[DenseMatrix] {
        &self.obs
    }

    pub fn iter(&self) -> std::slice::Iter<'_, DenseMatrix> {
        self.obs.iter()
    }

    pub fn missing_count(&self) -> usize {
        self.obs.iter().map(|x| x.iter().filter(|v| v.is_nan()).count()).sum()
    }

    pub fn is_complete(&self) -> bool {
        self.first_missing().is_none()
    }

    /// `(observation, row, col)` of the first missing cell in column-major order.
    pub fn first_missing(&self) -> Option<(usize, usize, usize)> {
        self.obs.iter().enumerate().find_map(|(i, x)| {
            x.iter().position(|v| v.is_nan()).map(|k| (i, k % self.p, k / self.p))
        })
    }

    pub fn subset(&self, indices: &[usize]) -> Result<ObservationSet> {
        ObservationSet::new(self.p, self.q, indices.iter().map(|&i| self.obs[i].clone()).collect())
    }

    pub(crate) fn require_complete(&self) -> Result<()> {
        match self.first_missing() {
            Some((obs, row, col)) => Err(Error::MissingData { obs, row, col }),
            None => Ok(()),
        }
    }
}

/// Log-density of a fully observed `x`.
pub fn log_density(x: &DenseMatrix, params: &MatNormParams) -> Result<f64> {
    let prec = params.precision()?;
    log_density_with(x, params, &prec)
}

pub(crate) fn log_density_with(x: &DenseMatrix, params: &MatNormParams, prec: &Precision) -> Result<f64> {
    check_shape(x, params)?;
    let (p, q) = (params.p() as f64, params.q() as f64);
    let d = prec.mahalanobis(&(x - params.mu()));
    Ok(-0.5 * p * q * (2.0 * PI * params.sigma2()).ln()
        - 0.5 * q * prec.log_det_s
        - 0.5 * p * prec.log_det_c
        - 0.5 * d / params.sigma2())
}

/// `tr[Σ_c⁻¹ (x−μ)ᵀ Σ_s⁻¹ (x−μ)]`, without the `σ²` scale.
pub fn mahalanobis(x: &DenseMatrix, params: &MatNormParams) -> Result<f64> {
    check_shape(x, params)?;
    Ok(params.precision()?.mahalanobis(&(x - params.mu())))
}

fn check_shape(x: &DenseMatrix, params: &MatNormParams) -> Result<()> {
    if x.shape() != params.mu().shape() {
        return Err(Error::Dimension(format!(
            "observation is {}x{}, parameters are {}x{}",
            x.nrows(),
            x.ncols(),
            params.p(),
            params.q()
        )));
    }
    if x.iter().any(|v| v.is_nan()) {
        return Err(Error::Invalid("observation has missing entries".into()));
    }
    Ok(())
}

/// Draws `X = μ + σ L_s G L_cᵀ` with `G` iid standard normal.
pub fn sample(params: &MatNormParams, n: usize, seed: u64) -> Result<ObservationSet> {
    if n == 0 {
        return Err(Error::Invalid("sample size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ls = params.sigma_s().cholesky_l() * params.sigma2().sqrt();
    let lct = params.sigma_c().cholesky_l().transpose();
    let (p, q) = (params.p(), params.q());
    let obs = (0..n)
        .map(|_| {
            let g = DenseMatrix::from_fn(p, q, |_, _| StandardNormal.sample(&mut rng));
            params.mu() + &ls * g * &lct
        })
        .collect();
    ObservationSet::new(p, q, obs)
}

pub fn full_log_likelihood(data: &ObservationSet, params: &MatNormParams) -> Result<f64> {
    data.require_complete()?;
    let prec = params.precision()?;
    data.iter().map(|x| log_density_with(x, params, &prec)).sum()
}

/// Log-likelihood of the observed entries: each observation contributes
/// the normal log-density of its observed sub-vector of `vec(X)` under the
/// corresponding marginal of `N(vec μ, σ² Σ_c ⊗ Σ_s)`.
pub fn observed_log_likelihood(data: &ObservationSet, params: &MatNormParams) -> Result<f64> {
    if data.p() != params.p() || data.q() != params.q() {
        return Err(Error::Dimension("data and parameter shapes differ".into()));
    }
    let p = params.p();
    let s = params.sigma_s().as_matrix();
    let c = params.sigma_c().as_matrix();
    let mu = params.mu().as_slice();
    let mut total = 0.0;
    for x in data.iter() {
        let observed: Vec<usize> = (0..x.len()).filter(|&k| !x.as_slice()[k].is_nan()).collect();
        let m = observed.len();
        let cov = DenseMatrix::from_fn(m, m, |a, b| {
            let (ia, ib) = (observed[a], observed[b]);
            params.sigma2() * c[(ia / p, ib / p)] * s[(ia % p, ib % p)]
        });
        let resid = DenseMatrix::from_fn(m, 1, |a, _| x.as_slice()[observed[a]] - mu[observed[a]]);
        total += mvn_log_density(&resid, &SpdMatrix::new(cov)?);
    }
    Ok(total)
}

/// Log-density of `N(0, cov)` at the column vector `resid`.
pub fn mvn_log_density(resid: &DenseMatrix, cov: &SpdMatrix) -> f64 {
    let k = resid.len() as f64;
    -0.5 * (k * (2.0 * PI).ln() + cov.log_det() + cov.inv_quad(resid))
}

/// Serializable snapshot of [`MatNormParams`] (`mu` nested row-major).
#[derive(Clone, Debug, Serialize)]
pub struct ParamsSnapshot {
    pub mu: Vec<Vec<f64>>,
    pub sigma_s: Vec<Vec<f64>>,
    pub sigma_c: Vec<Vec<f64>>,
    pub sigma2: f64,
}

pub fn rows_of(m: &DenseMatrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl From<&MatNormParams> for ParamsSnapshot {
    fn from(p: &MatNormParams) -> Self {
        Self {
            mu: rows_of(p.mu()),
            sigma_s: rows_of(p.sigma_s().as_matrix()),
            sigma_c: rows_of(p.sigma_c().as_matrix()),
            sigma2: p.sigma2(),
        }
    }
}
