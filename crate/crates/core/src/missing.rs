//! Estimators for incomplete data.
//!
//! * [`fit_mm`]: impute missing cells with the current mean, then run one
//!   complete-data flip-flop pass; repeat.
//! * [`fit_gem`]: EM for an unstructured `pq`-dimensional normal.
//! * [`fit_em`]: EM for the matrix normal model. The E-step conditions each
//!   observation on its observed cells by sweeping the missing positions of
//!   the Kronecker precision `Σ_c⁻¹ ⊗ Σ_s⁻¹`; the M-step feeds the completed
//!   residuals and the conditional covariances (through the `eop` mask
//!   products) into flip-flop passes until the factors settle.
//!
//! Without missing cells MM and EM hand over to the complete-data MLE loop.
//!
//! The E-step conditional covariance carries the `σ²` scale, so the M-step
//! statistics are in data units and `σ²` is re-derived after normalization.

use std::f64::consts::PI;
use std::time::Instant;

use log::warn;

use crate::complete::{fit_complete_grouped, warn_if_not_unique, FitConfig, FitResult};
use crate::error::{Error, Result};
use crate::flipflop::{
    expected_log_likelihood, factor_change, flip_flop_pass, rel_change, spd_with_jitter, GroupFactor, KronStats,
};
use crate::linalg::{eop, sweep_in_place, DenseMatrix, IndexSet, SpdMatrix};
use crate::model::{mvn_log_density, MatNormParams, ObservationSet, Precision};

/// Missing-cell bookkeeping for one observation.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsPattern {
    miss: IndexSet,
    rows: Vec<usize>,
    cols: Vec<usize>,
    row_mask: DenseMatrix,
    col_mask: DenseMatrix,
}

impl ObsPattern {
    pub fn from_observation(x: &DenseMatrix) -> Result<Self> {
        let (p, q) = x.shape();
        let miss: Vec<usize> = (0..x.len()).filter(|&k| x.as_slice()[k].is_nan()).collect();
        if miss.len() == p * q {
            return Err(Error::Invalid("observation has no observed entries".into()));
        }
        let rows: Vec<usize> = miss.iter().map(|k| k % p).collect();
        let cols: Vec<usize> = miss.iter().map(|k| k / p).collect();
        Ok(Self {
            row_mask: eop(&rows, p)?,
            col_mask: eop(&cols, q)?,
            miss: IndexSet::new(miss, p * q)?,
            rows,
            cols,
        })
    }

    /// Positions of the missing cells in `vec(X)`.
    pub fn miss(&self) -> &IndexSet {
        &self.miss
    }

    /// Row index of each missing cell (`m_s`).
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    /// Column index of each missing cell (`m_c`).
    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    /// `eop(m_s)`, `|miss| × p`.
    pub fn row_mask(&self) -> &DenseMatrix {
        &self.row_mask
    }

    /// `eop(m_c)`, `|miss| × q`.
    pub fn col_mask(&self) -> &DenseMatrix {
        &self.col_mask
    }

    pub fn is_complete(&self) -> bool {
        self.miss.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MissingPattern {
    p: usize,
    q: usize,
    obs: Vec<ObsPattern>,
}

impl MissingPattern {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn get(&self, i: usize) -> &ObsPattern {
        &self.obs[i]
    }

    pub fn observations(&self) -> &[ObsPattern] {
        &self.obs
    }
}

pub fn detect_pattern(data: &ObservationSet) -> Result<MissingPattern> {
    let obs = data.iter().map(ObsPattern::from_observation).collect::<Result<Vec<_>>>()?;
    Ok(MissingPattern { p: data.p(), q: data.q(), obs })
}

/// Conditional moments of the missing cells given the observed ones.
#[derive(Clone, Debug)]
pub struct ConditionalMoments {
    /// The observation with missing cells replaced by their conditional means.
    pub completion: DenseMatrix,
    /// `Var[Z | Y]` over the missing cells in `vec` order, including `σ²`.
    pub cond_cov: DenseMatrix,
    /// Log-density of the observed cells under their marginal.
    pub observed_log_density: f64,
}

pub fn conditional_moments(
    x: &DenseMatrix,
    params: &MatNormParams,
    pattern: &ObsPattern,
) -> Result<ConditionalMoments> {
    conditional_moments_with(x, params, &params.precision()?, pattern)
}

/// SWEEP-based conditioning on the precision `R = Σ_c⁻¹ ⊗ Σ_s⁻¹`.
///
/// Only the `miss` rows of `R` matter, so the sweep runs on the bordered
/// matrix `[[R_MM, b], [bᵀ, 0]]` with `b = R_MO (y − μ_O)`. After sweeping the
/// `M` pivots the border holds `R_MM⁻¹ b` (the negated regression of `Z` on
/// `Y`) and the corner holds `−bᵀ R_MM⁻¹ b`, which turns the full quadratic
/// form into the observed-marginal one. The pivots give `log|R_MM|`.
pub(crate) fn conditional_moments_with(
    x: &DenseMatrix,
    params: &MatNormParams,
    prec: &Precision,
    pattern: &ObsPattern,
) -> Result<ConditionalMoments> {
    let (p, q) = (params.p(), params.q());
    if x.shape() != (p, q) {
        return Err(Error::Dimension(format!("observation is {}x{}, expected {p}x{q}", x.nrows(), x.ncols())));
    }
    let mu = params.mu();
    let sigma2 = params.sigma2();
    let resid = DenseMatrix::from_fn(p, q, |r, c| {
        let v = x[(r, c)];
        if v.is_nan() {
            0.0
        } else {
            v - mu[(r, c)]
        }
    });
    let w = &prec.s_inv * &resid * &prec.c_inv;
    let full_quad = resid.dot(&w);
    let log_det_k = p as f64 * prec.log_det_c + q as f64 * prec.log_det_s;

    let miss = pattern.miss.as_slice();
    let m = miss.len();
    let n_obs = (p * q - m) as f64;
    if m == 0 {
        return Ok(ConditionalMoments {
            completion: x.clone(),
            cond_cov: DenseMatrix::zeros(0, 0),
            observed_log_density: -0.5 * (n_obs * (2.0 * PI * sigma2).ln() + log_det_k + full_quad / sigma2),
        });
    }

    let mut a = DenseMatrix::zeros(m + 1, m + 1);
    for (i, &ki) in miss.iter().enumerate() {
        let (ri, ci) = (ki % p, ki / p);
        for (j, &kj) in miss.iter().enumerate() {
            a[(i, j)] = prec.c_inv[(ci, kj / p)] * prec.s_inv[(ri, kj % p)];
        }
        a[(i, m)] = w.as_slice()[ki];
        a[(m, i)] = w.as_slice()[ki];
    }
    let pivots: Vec<usize> = (0..m).collect();
    let log_det_rmm = sweep_in_place(&mut a, &pivots)?;

    let mut completion = x.clone();
    for (i, &k) in miss.iter().enumerate() {
        completion.as_mut_slice()[k] = mu.as_slice()[k] - a[(i, m)];
    }
    let block = a.view((0, 0), (m, m));
    let cond_cov = (&block + block.transpose()) * (0.5 * sigma2);
    let quad = full_quad + a[(m, m)];
    Ok(ConditionalMoments {
        completion,
        cond_cov,
        observed_log_density: -0.5 * (n_obs * (2.0 * PI * sigma2).ln() + log_det_k + log_det_rmm + quad / sigma2),
    })
}

/// `eop(m_c)ᵀ (C ∘ B[m_s, m_s]) eop(m_c)` with `B = Σ_s⁻¹`: the conditional
/// covariance part of `E[(X−μ)ᵀ Σ_s⁻¹ (X−μ)]`.
pub fn col_mask_contribution(pattern: &ObsPattern, cond_cov: &DenseMatrix, s_inv: &DenseMatrix) -> DenseMatrix {
    let m = pattern.rows.len();
    let weighted = DenseMatrix::from_fn(m, m, |a, b| cond_cov[(a, b)] * s_inv[(pattern.rows[a], pattern.rows[b])]);
    pattern.col_mask.transpose() * weighted * &pattern.col_mask
}

/// `eop(m_s)ᵀ (C ∘ A[m_c, m_c]) eop(m_s)` with `A = Σ_c⁻¹`.
pub fn row_mask_contribution(pattern: &ObsPattern, cond_cov: &DenseMatrix, c_inv: &DenseMatrix) -> DenseMatrix {
    let m = pattern.cols.len();
    let weighted = DenseMatrix::from_fn(m, m, |a, b| cond_cov[(a, b)] * c_inv[(pattern.cols[a], pattern.cols[b])]);
    pattern.row_mask.transpose() * weighted * &pattern.row_mask
}

/// Sum of the entries of `C ∘ A[m_c, m_c] ∘ B[m_s, m_s]`, i.e.
/// `tr[(A ⊗ B)_MM C]`.
pub fn scale_mask_contribution(
    pattern: &ObsPattern,
    cond_cov: &DenseMatrix,
    c_inv: &DenseMatrix,
    s_inv: &DenseMatrix,
) -> f64 {
    let m = pattern.rows.len();
    let mut total = 0.0;
    for a in 0..m {
        for b in 0..m {
            total += cond_cov[(a, b)]
                * c_inv[(pattern.cols[a], pattern.cols[b])]
                * s_inv[(pattern.rows[a], pattern.rows[b])];
        }
    }
    total
}

/// Per-cell mean over the observations (restricted to `members`) where the
/// cell is observed. Cells never observed get 0.
fn observed_cell_means(data: &ObservationSet, members: &[usize]) -> DenseMatrix {
    let (p, q) = (data.p(), data.q());
    let mut sum = DenseMatrix::zeros(p, q);
    let mut count = DenseMatrix::zeros(p, q);
    for &i in members {
        for (k, &v) in data.get(i).iter().enumerate() {
            if !v.is_nan() {
                sum.as_mut_slice()[k] += v;
                count.as_mut_slice()[k] += 1.0;
            }
        }
    }
    DenseMatrix::from_fn(p, q, |r, c| {
        if count[(r, c)] > 0.0 {
            sum[(r, c)] / count[(r, c)]
        } else {
            warn!("cell ({r}, {c}) is missing in every observation; its mean starts at 0");
            0.0
        }
    })
}

/// Pooled variance of observed cells about `mu`, used as the starting `σ²`.
fn observed_variance(data: &ObservationSet, members: &[usize], mu: &DenseMatrix) -> f64 {
    let (mut ss, mut n) = (0.0, 0usize);
    for &i in members {
        for (v, m) in data.get(i).iter().zip(mu.iter()) {
            if !v.is_nan() {
                ss += (v - m).powi(2);
                n += 1;
            }
        }
    }
    let var = ss / n as f64;
    if var > 0.0 && var.is_finite() {
        var
    } else {
        1.0
    }
}

pub(crate) fn check_groups(data: &ObservationSet, groups: &[Vec<usize>]) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::Invalid("no groups".into()));
    }
    let mut seen = vec![false; data.n()];
    for g in groups {
        if g.len() < 2 {
            return Err(Error::Invalid(format!("a group has {} observation(s); at least 2 are required", g.len())));
        }
        for &i in g {
            if i >= data.n() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Invalid(format!("observation index {i} is out of range or repeated")));
            }
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Invalid("every observation must belong to a group".into()));
    }
    Ok(())
}

/// Fit of several groups sharing `Σ_s`, each with its own mean, `Σ_c` and `σ²`.
#[derive(Clone, Debug)]
pub struct GroupedFit {
    /// One parameter set per group; all share the same `sigma_s`.
    pub params: Vec<MatNormParams>,
    /// Each observation with missing cells filled in (conditional means for
    /// EM, the group mean for MM), under the returned parameters.
    pub completions: Vec<DenseMatrix>,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub wall_time: f64,
    pub converged: bool,
}

impl GroupedFit {
    pub(crate) fn into_single(mut self) -> FitResult {
        FitResult {
            params: self.params.pop().expect("one group"),
            loglik_trace: self.loglik_trace,
            iterations: self.iterations,
            wall_time: self.wall_time,
            converged: self.converged,
        }
    }
}

fn assemble(mus: Vec<DenseMatrix>, sigma_s: &SpdMatrix, factors: Vec<GroupFactor>) -> Result<Vec<MatNormParams>> {
    mus.into_iter()
        .zip(factors)
        .map(|(mu, f)| MatNormParams::new(mu, sigma_s.clone(), f.sigma_c, f.sigma2))
        .collect()
}

fn split_factors(params: &[MatNormParams]) -> (SpdMatrix, Vec<GroupFactor>) {
    let s = params[0].sigma_s().clone();
    let f = params.iter().map(|p| GroupFactor { sigma_c: p.sigma_c().clone(), sigma2: p.sigma2() }).collect();
    (s, f)
}

fn initial_params(data: &ObservationSet, groups: &[Vec<usize>]) -> Result<Vec<MatNormParams>> {
    let (p, q) = (data.p(), data.q());
    groups
        .iter()
        .map(|g| {
            let mu = observed_cell_means(data, g);
            let var = observed_variance(data, g, &mu);
            MatNormParams::new(mu, SpdMatrix::identity(p), SpdMatrix::identity(q), var)
        })
        .collect()
}

struct EStep {
    moments: Vec<ConditionalMoments>,
    loglik: f64,
}

fn e_step(
    data: &ObservationSet,
    pattern: &MissingPattern,
    groups: &[Vec<usize>],
    params: &[MatNormParams],
) -> Result<EStep> {
    let mut slots: Vec<Option<ConditionalMoments>> = vec![None; data.n()];
    let mut loglik = 0.0;
    for (g, members) in groups.iter().enumerate() {
        let prec = params[g].precision()?;
        for &i in members {
            let cm = conditional_moments_with(data.get(i), &params[g], &prec, pattern.get(i))?;
            loglik += cm.observed_log_density;
            slots[i] = Some(cm);
        }
    }
    Ok(EStep { moments: slots.into_iter().map(|m| m.expect("every observation grouped")).collect(), loglik })
}

fn m_step(
    pattern: &MissingPattern,
    groups: &[Vec<usize>],
    moments: &[ConditionalMoments],
    current: &[MatNormParams],
    cfg: &FitConfig,
) -> Result<Vec<MatNormParams>> {
    let (p, q) = (pattern.p, pattern.q);
    let mut mus = Vec::with_capacity(groups.len());
    let mut stats = Vec::with_capacity(groups.len());
    for members in groups {
        let mu = members.iter().fold(DenseMatrix::zeros(p, q), |acc, &i| acc + &moments[i].completion)
            / members.len() as f64;
        let mut st = KronStats::new(p, q);
        for &i in members {
            let pat = pattern.get(i);
            let cond = (!pat.is_complete()).then(|| (pat, moments[i].cond_cov.clone()));
            st.push(&(&moments[i].completion - &mu), cond);
        }
        mus.push(mu);
        stats.push(st);
    }

    let (mut sigma_s, mut factors) = split_factors(current);
    for _ in 0..cfg.max_inner_iters {
        let (new_s, new_f) = flip_flop_pass(&stats, &sigma_s, cfg.jitter)?;
        let change = factor_change(&new_s, &new_f, &sigma_s, &factors);
        sigma_s = new_s;
        factors = new_f;
        if change < cfg.inner_tol {
            break;
        }
    }
    assemble(mus, &sigma_s, factors)
}

/// One EM iteration (E-step at `params`, then the M-step).
pub fn em_step(data: &ObservationSet, params: &MatNormParams, cfg: &FitConfig) -> Result<MatNormParams> {
    cfg.validate()?;
    let pattern = detect_pattern(data)?;
    let groups = vec![(0..data.n()).collect::<Vec<_>>()];
    let current = vec![params.clone()];
    let e = e_step(data, &pattern, &groups, &current)?;
    Ok(m_step(&pattern, &groups, &e.moments, &current, cfg)?.pop().expect("one group"))
}

pub fn fit_em(data: &ObservationSet, cfg: &FitConfig) -> Result<FitResult> {
    warn_if_not_unique(data.n(), data.p(), data.q());
    Ok(fit_em_grouped(data, &[(0..data.n()).collect()], cfg)?.into_single())
}

/// Matrix-normal EM over groups sharing `Σ_s`.
///
/// The trace holds the observed-data log-likelihood evaluated at the start
/// of each E-step; the fit stops when its relative change drops below `tol`.
pub fn fit_em_grouped(data: &ObservationSet, groups: &[Vec<usize>], cfg: &FitConfig) -> Result<GroupedFit> {
    cfg.validate()?;
    check_groups(data, groups)?;
    if data.is_complete() {
        return fit_complete_grouped(data, groups, cfg);
    }
    let start = Instant::now();
    let pattern = detect_pattern(data)?;
    let mut params = initial_params(data, groups)?;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let converged;
    let completions = loop {
        let e = e_step(data, &pattern, groups, &params)?;
        let done = trace.last().is_some_and(|&prev| rel_change(e.loglik, prev) < cfg.tol);
        trace.push(e.loglik);
        if done || iterations == cfg.max_iters {
            converged = done;
            break e.moments.into_iter().map(|m| m.completion).collect();
        }
        params = m_step(&pattern, groups, &e.moments, &params, cfg)?;
        iterations += 1;
    };
    Ok(GroupedFit {
        params,
        completions,
        loglik_trace: trace,
        iterations,
        wall_time: start.elapsed().as_secs_f64(),
        converged,
    })
}

pub fn fit_mm(data: &ObservationSet, cfg: &FitConfig) -> Result<FitResult> {
    warn_if_not_unique(data.n(), data.p(), data.q());
    Ok(fit_mm_grouped(data, &[(0..data.n()).collect()], cfg)?.into_single())
}

/// Mean-imputation fit over groups sharing `Σ_s`.
///
/// Each iteration writes the current group means into the missing cells,
/// re-estimates the means from the completed data and applies one flip-flop
/// pass. The trace is the complete-data log-likelihood of the imputed data.
pub fn fit_mm_grouped(data: &ObservationSet, groups: &[Vec<usize>], cfg: &FitConfig) -> Result<GroupedFit> {
    cfg.validate()?;
    check_groups(data, groups)?;
    if data.is_complete() {
        return fit_complete_grouped(data, groups, cfg);
    }
    let start = Instant::now();
    let (p, q) = (data.p(), data.q());
    let pattern = detect_pattern(data)?;
    let mut mus: Vec<DenseMatrix> = groups.iter().map(|g| observed_cell_means(data, g)).collect();
    let mut sigma_s = SpdMatrix::identity(p);
    let mut factors: Vec<GroupFactor> =
        groups.iter().map(|_| GroupFactor { sigma_c: SpdMatrix::identity(q), sigma2: 1.0 }).collect();
    let mut completions: Vec<DenseMatrix> = data.observations().to_vec();
    let mut trace: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iters {
        for (g, members) in groups.iter().enumerate() {
            for &i in members {
                let filled = &mut completions[i];
                for &k in pattern.get(i).miss.as_slice() {
                    filled.as_mut_slice()[k] = mus[g].as_slice()[k];
                }
            }
        }
        let new_mus: Vec<DenseMatrix> = groups
            .iter()
            .map(|g| g.iter().fold(DenseMatrix::zeros(p, q), |acc, &i| acc + &completions[i]) / g.len() as f64)
            .collect();
        let stats: Vec<KronStats> = groups
            .iter()
            .zip(&new_mus)
            .map(|(members, mu)| {
                let mut st = KronStats::new(p, q);
                for &i in members {
                    st.push(&(&completions[i] - mu), None);
                }
                st
            })
            .collect();
        let (new_s, new_f) = flip_flop_pass(&stats, &sigma_s, cfg.jitter)?;
        let ll = expected_log_likelihood(&stats, &new_s, &new_f)?;
        let mu_change = new_mus
            .iter()
            .zip(&mus)
            .map(|(a, b)| crate::linalg::rel_frobenius(a, b))
            .fold(0.0, f64::max);
        let change = factor_change(&new_s, &new_f, &sigma_s, &factors).max(mu_change);
        let ll_ok = trace.last().is_some_and(|&prev| rel_change(ll, prev) < cfg.tol);
        trace.push(ll);
        mus = new_mus;
        sigma_s = new_s;
        factors = new_f;
        iterations += 1;
        if ll_ok && change < cfg.inner_tol {
            converged = true;
            break;
        }
    }
    // Completions reflect the returned means.
    for (g, members) in groups.iter().enumerate() {
        for &i in members {
            for &k in pattern.get(i).miss.as_slice() {
                completions[i].as_mut_slice()[k] = mus[g].as_slice()[k];
            }
        }
    }
    Ok(GroupedFit {
        params: assemble(mus, &sigma_s, factors)?,
        completions,
        loglik_trace: trace,
        iterations,
        wall_time: start.elapsed().as_secs_f64(),
        converged,
    })
}

/// Parameters of the unstructured model `vec(X) ~ N(mean, cov)`.
#[derive(Clone, Debug)]
pub struct UnstructuredParams {
    /// `pq × 1`, in `vec` order.
    pub mean: DenseMatrix,
    pub cov: SpdMatrix,
}

#[derive(Clone, Debug)]
pub struct GemResult {
    pub params: UnstructuredParams,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub wall_time: f64,
    pub converged: bool,
}

impl GemResult {
    pub fn final_loglik(&self) -> f64 {
        self.loglik_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Textbook conditioning of a `pq`-variate normal on the observed cells of `x`.
pub fn mvn_conditional(x: &DenseMatrix, mean: &DenseMatrix, cov: &SpdMatrix) -> Result<ConditionalMoments> {
    let d = x.len();
    if mean.len() != d || cov.dim() != d {
        return Err(Error::Dimension("observation, mean and covariance sizes differ".into()));
    }
    let vals = x.as_slice();
    let full = cov.as_matrix();
    let missing: Vec<usize> = (0..d).filter(|&k| vals[k].is_nan()).collect();
    let observed: Vec<usize> = (0..d).filter(|&k| !vals[k].is_nan()).collect();
    if observed.is_empty() {
        return Err(Error::Invalid("observation has no observed entries".into()));
    }
    let sub = |rows: &[usize], cols: &[usize]| crate::linalg::submatrix(full, rows, cols);
    let resid = DenseMatrix::from_fn(observed.len(), 1, |a, _| vals[observed[a]] - mean[(observed[a], 0)]);
    let cov_oo = if missing.is_empty() { cov.clone() } else { SpdMatrix::new(sub(&observed, &observed))? };
    let log_density = mvn_log_density(&resid, &cov_oo);
    let mut completion = x.clone();
    if missing.is_empty() {
        return Ok(ConditionalMoments { completion, cond_cov: DenseMatrix::zeros(0, 0), observed_log_density: log_density });
    }
    let cov_om = sub(&observed, &missing);
    let gain = cov_oo.solve(&cov_om); // Σ_OO⁻¹ Σ_OM
    let shift = gain.transpose() * &resid;
    for (a, &k) in missing.iter().enumerate() {
        completion.as_mut_slice()[k] = mean[(k, 0)] + shift[(a, 0)];
    }
    let cond = sub(&missing, &missing) - cov_om.transpose() * &gain;
    Ok(ConditionalMoments {
        completion,
        cond_cov: crate::linalg::symmetrize(&cond),
        observed_log_density: log_density,
    })
}

/// EM for the unstructured normal on `vec(X)`.
pub fn fit_gem(data: &ObservationSet, cfg: &FitConfig) -> Result<GemResult> {
    cfg.validate()?;
    let (p, q, n) = (data.p(), data.q(), data.n());
    let d = p * q;
    if n < 2 {
        return Err(Error::Invalid("at least two observations are required".into()));
    }
    if n <= d {
        warn!("N = {n} does not exceed pq = {d}; the unstructured covariance is not identifiable");
    }
    let start = Instant::now();
    let all: Vec<usize> = (0..n).collect();
    let mu0 = observed_cell_means(data, &all);
    let mut var0 = DenseMatrix::zeros(d, d);
    for k in 0..d {
        let (mut ss, mut cnt) = (0.0, 0usize);
        for x in data.iter() {
            let v = x.as_slice()[k];
            if !v.is_nan() {
                ss += (v - mu0.as_slice()[k]).powi(2);
                cnt += 1;
            }
        }
        var0[(k, k)] = if cnt > 0 && ss > 0.0 { ss / cnt as f64 } else { 1.0 };
    }
    let mut params = UnstructuredParams {
        mean: DenseMatrix::from_column_slice(d, 1, mu0.as_slice()),
        cov: SpdMatrix::new(var0)?,
    };

    let mut trace = Vec::new();
    let mut iterations = 0;
    let converged;
    loop {
        let moments =
            data.iter().map(|x| mvn_conditional(x, &params.mean, &params.cov)).collect::<Result<Vec<_>>>()?;
        let ll: f64 = moments.iter().map(|m| m.observed_log_density).sum();
        let done = trace.last().is_some_and(|&prev| rel_change(ll, prev) < cfg.tol);
        trace.push(ll);
        if done || iterations == cfg.max_iters {
            converged = done;
            break;
        }
        let mean = moments
            .iter()
            .fold(DenseMatrix::zeros(d, 1), |acc, m| acc + DenseMatrix::from_column_slice(d, 1, m.completion.as_slice()))
            / n as f64;
        let mut scatter = DenseMatrix::zeros(d, d);
        for (x, m) in data.iter().zip(&moments) {
            let e = nalgebra::DVector::from_column_slice(m.completion.as_slice()) - mean.column(0);
            scatter.ger(1.0, &e, &e, 1.0);
            let miss: Vec<usize> = (0..d).filter(|&k| x.as_slice()[k].is_nan()).collect();
            for (a, &i) in miss.iter().enumerate() {
                for (b, &j) in miss.iter().enumerate() {
                    scatter[(i, j)] += m.cond_cov[(a, b)];
                }
            }
        }
        params = UnstructuredParams { mean, cov: spd_with_jitter(scatter / n as f64, cfg.jitter, "covariance")? };
        iterations += 1;
    }
    Ok(GemResult { params, loglik_trace: trace, iterations, wall_time: start.elapsed().as_secs_f64(), converged })
}
