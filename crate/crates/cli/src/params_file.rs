//! JSON parameter files. Matrices are nested row-major (`m[r][c]`). A GEM
//! fit has no Kronecker factors; it stores the mean in `mu` and the full
//! `pq × pq` covariance (in `vec` order) in `cov`.

use anyhow::{bail, ensure, Result};
use matnorm::missing::UnstructuredParams;
use matnorm::{DenseMatrix, MatNormParams, SpdMatrix};
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub method: String,
    pub iterations: usize,
    pub loglik: f64,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub format_version: u32,
    pub p: usize,
    pub q: usize,
    pub mu: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_s: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_c: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<Vec<Vec<f64>>>,
    pub meta: FitMeta,
}

pub fn rows_of(m: &DenseMatrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn matrix_of(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<DenseMatrix> {
    ensure!(rows.len() == nrows, "{what} has {} rows, expected {nrows}", rows.len());
    if let Some(r) = rows.iter().find(|r| r.len() != ncols) {
        bail!("{what} has a row of length {}, expected {ncols}", r.len());
    }
    Ok(DenseMatrix::from_fn(nrows, ncols, |r, c| rows[r][c]))
}

impl ParamsFile {
    pub fn from_params(params: &MatNormParams, meta: FitMeta) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            p: params.p(),
            q: params.q(),
            mu: rows_of(params.mu()),
            sigma_s: Some(rows_of(params.sigma_s().as_matrix())),
            sigma_c: Some(rows_of(params.sigma_c().as_matrix())),
            sigma2: Some(params.sigma2()),
            cov: None,
            meta,
        }
    }

    pub fn from_unstructured(params: &UnstructuredParams, p: usize, q: usize, meta: FitMeta) -> Self {
        let mu = DenseMatrix::from_column_slice(p, q, params.mean.as_slice());
        Self {
            format_version: FORMAT_VERSION,
            p,
            q,
            mu: rows_of(&mu),
            sigma_s: None,
            sigma_c: None,
            sigma2: None,
            cov: Some(rows_of(params.cov.as_matrix())),
            meta,
        }
    }

    fn check_version(&self) -> Result<()> {
        ensure!(self.format_version == FORMAT_VERSION, "unsupported format_version {}", self.format_version);
        Ok(())
    }

    pub fn to_params(&self) -> Result<MatNormParams> {
        self.check_version()?;
        let (Some(s), Some(c), Some(sigma2)) = (&self.sigma_s, &self.sigma_c, self.sigma2) else {
            bail!("parameter file has no Kronecker factors");
        };
        let mu = matrix_of(&self.mu, self.p, self.q, "mu")?;
        let s = SpdMatrix::new(matrix_of(s, self.p, self.p, "sigma_s")?)?;
        let c = SpdMatrix::new(matrix_of(c, self.q, self.q, "sigma_c")?)?;
        Ok(MatNormParams::new(mu, s, c, sigma2)?)
    }

    pub fn to_unstructured(&self) -> Result<UnstructuredParams> {
        self.check_version()?;
        let d = self.p * self.q;
        let mu = matrix_of(&self.mu, self.p, self.q, "mu")?;
        let cov = match &self.cov {
            Some(cov) => SpdMatrix::new(matrix_of(cov, d, d, "cov")?)?,
            None => SpdMatrix::new(self.to_params()?.full_covariance())?,
        };
        Ok(UnstructuredParams { mean: DenseMatrix::from_column_slice(d, 1, mu.as_slice()), cov })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: Self = serde_json::from_str(s)?;
        file.check_version()?;
        Ok(file)
    }
}
