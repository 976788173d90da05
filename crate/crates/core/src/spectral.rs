//! Class-conditional fits, PCA on the shared row covariance, separability
//! distances, clustering of classes and maximum likelihood classification.
//!
//! Each class `c` has its own mean, column covariance and scale while all
//! classes share `Σ_s`. PCA on `Σ_s` gives `V_k` (`p × k`); an observation
//! `X` is projected to `V_kᵀ X`, which keeps the column (temporal) structure.

use log::warn;
use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::complete::FitConfig;
use crate::error::{Error, Result};
use crate::linalg::{symmetrize, DenseMatrix, SpdMatrix};
use crate::missing::{fit_em_grouped, fit_mm_grouped, GroupedFit};
use crate::model::{log_density, MatNormParams, ObservationSet};
use crate::sim::Method;

/// Observations with class labels `1..=K`, each class holding at least two.
#[derive(Clone, Debug)]
pub struct LabeledObservationSet {
    data: ObservationSet,
    labels: Vec<usize>,
    classes: usize,
}

impl LabeledObservationSet {
    pub fn new(data: ObservationSet, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != data.n() {
            return Err(Error::Dimension(format!("{} labels for {} observations", labels.len(), data.n())));
        }
        let classes = labels.iter().copied().max().unwrap_or(0);
        let mut counts = vec![0usize; classes + 1];
        for &l in &labels {
            counts[l] += 1;
        }
        if counts[0] > 0 {
            return Err(Error::Invalid("labels start at 1".into()));
        }
        if let Some(c) = (1..=classes).find(|&c| counts[c] < 2) {
            return Err(Error::Invalid(format!(
                "class {c} has {} observation(s); labels must be dense 1..K with at least 2 per class",
                counts[c]
            )));
        }
        Ok(Self { data, labels, classes })
    }

    pub fn data(&self) -> &ObservationSet {
        &self.data
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Number of classes `K`.
    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Observation indices of each class, class 1 first.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut g = vec![Vec::new(); self.classes];
        for (i, &l) in self.labels.iter().enumerate() {
            g[l - 1].push(i);
        }
        g
    }
}

/// Per-class fits sharing one `Σ_s`.
#[derive(Clone, Debug)]
pub struct ClassModel {
    pub method: Method,
    /// Class `c` is at index `c − 1`.
    pub classes: Vec<MatNormParams>,
    /// Each observation with missing cells filled in by the fit.
    pub completions: Vec<DenseMatrix>,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl ClassModel {
    pub fn sigma_s(&self) -> &SpdMatrix {
        self.classes[0].sigma_s()
    }
}

pub fn fit_class_models(data: &LabeledObservationSet, method: Method, cfg: &FitConfig) -> Result<ClassModel> {
    let groups = data.groups();
    let fit: GroupedFit = match method {
        Method::Em => fit_em_grouped(data.data(), &groups, cfg)?,
        Method::Mm => fit_mm_grouped(data.data(), &groups, cfg)?,
        Method::Gem => return Err(Error::Invalid("class models need a Kronecker method (mm or em)".into())),
    };
    if !fit.converged {
        warn!("{method} class fit stopped after {} iterations without converging", fit.iterations);
    }
    Ok(ClassModel {
        method,
        classes: fit.params,
        completions: fit.completions,
        loglik_trace: fit.loglik_trace,
        iterations: fit.iterations,
        converged: fit.converged,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaResult {
    /// Leading `k` eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// `p × k`, orthonormal columns; each column's largest-magnitude entry is positive.
    pub eigenvectors: DenseMatrix,
    /// Each eigenvalue over the trace.
    pub fractions: Vec<f64>,
}

impl PcaResult {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn cumulative(&self) -> Vec<f64> {
        self.fractions
            .iter()
            .scan(0.0, |acc, f| {
                *acc += f;
                Some(*acc)
            })
            .collect()
    }
}

/// Leading `k` principal components of an SPD matrix.
pub fn pca(sigma: &SpdMatrix, k: usize) -> Result<PcaResult> {
    let p = sigma.dim();
    if k == 0 || k > p {
        return Err(Error::Invalid(format!("requested {k} components of a {p}-dimensional covariance")));
    }
    let eig = SymmetricEigen::new(sigma.as_matrix().clone());
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let trace = sigma.as_matrix().trace();
    let mut vectors = DenseMatrix::zeros(p, k);
    let mut values = Vec::with_capacity(k);
    for (j, &o) in order.iter().take(k).enumerate() {
        let mut v = eig.eigenvectors.column(o).into_owned();
        let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            v = -v;
        }
        vectors.set_column(j, &v);
        values.push(eig.eigenvalues[o].max(0.0));
    }
    Ok(PcaResult { fractions: values.iter().map(|l| l / trace).collect(), eigenvalues: values, eigenvectors: vectors })
}

pub fn pca_sigma_s(model: &ClassModel, k: usize) -> Result<PcaResult> {
    pca(model.sigma_s(), k)
}

/// `V_kᵀ X`, a `k × q` matrix.
pub fn project(x: &DenseMatrix, pca: &PcaResult) -> Result<DenseMatrix> {
    if x.nrows() != pca.eigenvectors.nrows() {
        return Err(Error::Dimension(format!("observation has {} rows, PCA expects {}", x.nrows(), pca.eigenvectors.nrows())));
    }
    if x.iter().any(|v| v.is_nan()) {
        return Err(Error::Invalid("cannot project an observation with missing cells; use its completion".into()));
    }
    Ok(pca.eigenvectors.transpose() * x)
}

/// Projects every completed observation of a fitted model.
pub fn project_completions(model: &ClassModel, pca: &PcaResult) -> Result<Vec<DenseMatrix>> {
    model.completions.iter().map(|x| project(x, pca)).collect()
}

/// Two-sided distance between `(μ_i, Σ_i)` and `(μ_j, Σ_j)` through the
/// in-between center `μ̄ = Σ_i⁻¹ S⁻¹ μ_i + Σ_j⁻¹ S⁻¹ μ_j`, `S = Σ_i⁻¹ + Σ_j⁻¹`.
pub fn class_distance(mu_i: &DenseMatrix, cov_i: &SpdMatrix, mu_j: &DenseMatrix, cov_j: &SpdMatrix) -> Result<f64> {
    let d = cov_i.dim();
    if cov_j.dim() != d || mu_i.shape() != (d, 1) || mu_j.shape() != (d, 1) {
        return Err(Error::Dimension("means and covariances must share one dimension".into()));
    }
    let p_i = cov_i.inverse()?.into_matrix();
    let p_j = cov_j.inverse()?.into_matrix();
    let s_inv = SpdMatrix::new(&p_i + &p_j)
        .map_err(|_| Error::Singular("precision sum is singular".into()))?
        .inverse()?
        .into_matrix();
    let center = &p_i * &s_inv * mu_i + &p_j * &s_inv * mu_j;
    let (a, b) = (mu_i - &center, mu_j - &center);
    Ok(a.dot(&(&p_i * &a)) + b.dot(&(&p_j * &b)))
}

/// Mean and covariance of a set of `vec`'d points.
pub fn vec_moments(points: &[&DenseMatrix]) -> Result<(DenseMatrix, SpdMatrix)> {
    let n = points.len();
    if n < 2 {
        return Err(Error::Invalid("at least two points are needed".into()));
    }
    let d = points[0].len();
    let mut mean = DenseMatrix::zeros(d, 1);
    for x in points {
        mean += DenseMatrix::from_column_slice(d, 1, x.as_slice());
    }
    mean /= n as f64;
    let mut cov = DenseMatrix::zeros(d, d);
    for x in points {
        let e = DenseMatrix::from_column_slice(d, 1, x.as_slice()) - &mean;
        cov += &e * e.transpose();
    }
    let cov = SpdMatrix::new(cov / n as f64)
        .map_err(|_| Error::Singular(format!("sample covariance of {n} points in dimension {d} is singular")))?;
    Ok((mean, cov))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Separability {
    /// Symmetric `K × K`, zero diagonal.
    pub distances: DenseMatrix,
    /// `Σ_{i<j} d_ij`.
    pub total: f64,
}

impl Separability {
    pub fn log_total(&self) -> f64 {
        self.total.ln()
    }
}

/// Pairwise distances between classes of projected points, using each
/// class's sample mean and covariance of `vec(V_kᵀ X)`.
pub fn separability(projected: &[DenseMatrix], labels: &[usize], classes: usize) -> Result<Separability> {
    if projected.len() != labels.len() {
        return Err(Error::Dimension("one label per point is required".into()));
    }
    let moments = (1..=classes)
        .map(|c| {
            let pts: Vec<&DenseMatrix> = projected.iter().zip(labels).filter(|(_, &l)| l == c).map(|(x, _)| x).collect();
            vec_moments(&pts)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut distances = DenseMatrix::zeros(classes, classes);
    let mut total = 0.0;
    for i in 0..classes {
        for j in i + 1..classes {
            let d = class_distance(&moments[i].0, &moments[i].1, &moments[j].0, &moments[j].1)?;
            distances[(i, j)] = d;
            distances[(j, i)] = d;
            total += d;
        }
    }
    Ok(Separability { distances, total })
}

/// One agglomeration step. Leaves are `0..K`; the cluster formed by merge
/// `t` gets id `K + t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: usize,
    pub merges: Vec<Merge>,
}

/// Average-linkage agglomerative clustering. Ties go to the pair with the
/// lowest cluster ids.
pub fn hierarchical_cluster(distances: &DenseMatrix) -> Result<Dendrogram> {
    let k = distances.nrows();
    if distances.ncols() != k {
        return Err(Error::Dimension("distance matrix must be square".into()));
    }
    if k < 2 {
        return Err(Error::Invalid("clustering needs at least two classes".into()));
    }
    for i in 0..k {
        if distances[(i, i)] != 0.0 {
            return Err(Error::Invalid("distance matrix must have a zero diagonal".into()));
        }
        for j in 0..i {
            let (a, b) = (distances[(i, j)], distances[(j, i)]);
            if !(a.is_finite() && a >= 0.0) || (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                return Err(Error::Invalid("distances must be finite, non-negative and symmetric".into()));
            }
        }
    }
    // (id, leaf members)
    let mut active: Vec<(usize, Vec<usize>)> = (0..k).map(|i| (i, vec![i])).collect();
    let mut merges = Vec::with_capacity(k - 1);
    let linkage = |a: &[usize], b: &[usize]| {
        let sum: f64 = a.iter().flat_map(|&i| b.iter().map(move |&j| distances[(i, j)])).sum();
        sum / (a.len() * b.len()) as f64
    };
    while active.len() > 1 {
        let mut best = (0, 1, f64::INFINITY);
        for a in 0..active.len() {
            for b in a + 1..active.len() {
                let d = linkage(&active[a].1, &active[b].1);
                if d < best.2 {
                    best = (a, b, d);
                }
            }
        }
        let (a, b, height) = best;
        let (id_b, members_b) = active.remove(b);
        let (id_a, mut members) = active.remove(a);
        members.extend(members_b);
        members.sort_unstable();
        merges.push(Merge { left: id_a, right: id_b, height, size: members.len() });
        active.push((k + merges.len() - 1, members));
    }
    Ok(Dendrogram { leaves: k, merges })
}

/// Class parameters in the PC space: mean `V_kᵀ μ_c`, row covariance
/// `V_kᵀ Σ_s V_k`, the class column covariance and scale.
pub fn projected_params(model: &ClassModel, pca: &PcaResult) -> Result<Vec<MatNormParams>> {
    let v = &pca.eigenvectors;
    let row = SpdMatrix::new(v.transpose() * model.sigma_s().as_matrix() * v)?;
    model
        .classes
        .iter()
        .map(|c| MatNormParams::new_unnormalized(v.transpose() * c.mu(), row.clone(), c.sigma_c().clone(), c.sigma2()))
        .collect()
}

/// Label (1-based) maximizing the matrix normal log-density of a projected
/// observation; ties go to the lower label.
pub fn classify_projected(y: &DenseMatrix, projected: &[MatNormParams]) -> Result<usize> {
    let mut best = (0, f64::NEG_INFINITY);
    for (c, params) in projected.iter().enumerate() {
        let ll = log_density(y, params)?;
        if ll > best.1 {
            best = (c + 1, ll);
        }
    }
    if best.0 == 0 {
        return Err(Error::Invalid("no class has a finite density".into()));
    }
    Ok(best.0)
}

pub fn mle_classify(x: &DenseMatrix, model: &ClassModel, pca: &PcaResult) -> Result<usize> {
    classify_projected(&project(x, pca)?, &projected_params(model, pca)?)
}

/// `confusion[(t − 1, p − 1)]` counts observations of true class `t`
/// assigned to `p`.
pub fn confusion_matrix(truth: &[usize], predicted: &[usize], classes: usize) -> Result<DenseMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::Dimension("label vectors differ in length".into()));
    }
    let mut m = DenseMatrix::zeros(classes, classes);
    for (&t, &p) in truth.iter().zip(predicted) {
        if t == 0 || p == 0 || t > classes || p > classes {
            return Err(Error::IndexOutOfRange { index: t.max(p), bound: classes + 1 });
        }
        m[(t - 1, p - 1)] += 1.0;
    }
    Ok(m)
}

pub fn accuracy(confusion: &DenseMatrix) -> f64 {
    confusion.trace() / confusion.sum()
}

/// Rebuilds `V diag(λ) Vᵀ` from a PCA.
pub fn reconstruct(pca: &PcaResult) -> DenseMatrix {
    let v = &pca.eigenvectors;
    let lambda = DenseMatrix::from_diagonal(&nalgebra::DVector::from_vec(pca.eigenvalues.clone()));
    symmetrize(&(v * lambda * v.transpose()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sample;
    use crate::testing::{random_matrix, random_normalized_spd, random_spd, rng};
    use proptest::prelude::*;

    fn two_class_data(seed: u64, n: usize, shift: f64) -> (LabeledObservationSet, MatNormParams, MatNormParams) {
        let mut g = rng(seed);
        let (p, q) = (3, 4);
        let s = random_normalized_spd(&mut g, p);
        let mu1 = random_matrix(&mut g, p, q);
        let mu2 = &mu1 + DenseMatrix::from_element(p, q, shift);
        let a = MatNormParams::new(mu1, s.clone(), random_normalized_spd(&mut g, q), 0.5).unwrap();
        let b = MatNormParams::new(mu2, s, random_normalized_spd(&mut g, q), 1.5).unwrap();
        let mut obs = sample(&a, n, seed + 1).unwrap().observations().to_vec();
        obs.extend(sample(&b, n, seed + 2).unwrap().observations().iter().cloned());
        let labels = (0..2 * n).map(|i| if i < n { 1 } else { 2 }).collect();
        (LabeledObservationSet::new(ObservationSet::new(p, q, obs).unwrap(), labels).unwrap(), a, b)
    }

    #[test]
    fn label_validation() {
        let data = sample(&MatNormParams::new(DenseMatrix::zeros(1, 1), SpdMatrix::identity(1), SpdMatrix::identity(1), 1.0).unwrap(), 4, 1).unwrap();
        assert!(LabeledObservationSet::new(data.clone(), vec![1, 1, 2, 2]).is_ok());
        assert!(LabeledObservationSet::new(data.clone(), vec![1, 1, 3, 3]).is_err());
        assert!(LabeledObservationSet::new(data.clone(), vec![0, 0, 1, 1]).is_err());
        assert!(LabeledObservationSet::new(data.clone(), vec![1, 1, 1, 2]).is_err());
        assert!(LabeledObservationSet::new(data, vec![1, 1, 2]).is_err());
    }

    #[test]
    fn single_class_matches_direct_fits() {
        let (labeled, _, _) = two_class_data(1, 60, 1.0);
        let data = labeled.data().clone();
        let one = LabeledObservationSet::new(data.clone(), vec![1; data.n()]).unwrap();
        let cfg = FitConfig::default();
        let grouped = fit_class_models(&one, Method::Em, &cfg).unwrap();
        let direct = crate::missing::fit_em(&data, &cfg).unwrap();
        assert_eq!(grouped.classes[0], direct.params);
        let grouped = fit_class_models(&one, Method::Mm, &cfg).unwrap();
        let direct = crate::missing::fit_mm(&data, &cfg).unwrap();
        assert_eq!(grouped.classes[0], direct.params);
        assert!(fit_class_models(&one, Method::Gem, &cfg).is_err());
    }

    #[test]
    fn pooled_row_covariance_beats_separate_fits() {
        let (labeled, a, _) = two_class_data(2, 500, 1.0);
        let cfg = FitConfig::default();
        let pooled = fit_class_models(&labeled, Method::Em, &cfg).unwrap();
        assert!(pooled.classes.iter().all(|c| c.sigma_s() == pooled.sigma_s()));
        let truth = a.sigma_s().as_matrix();
        let pooled_err = (pooled.sigma_s().as_matrix() - truth).norm();
        for g in labeled.groups() {
            let sep = crate::complete::fit_mle(&labeled.data().subset(&g).unwrap(), &cfg).unwrap();
            assert!(pooled_err < (sep.params.sigma_s().as_matrix() - truth).norm());
        }
    }

    #[test]
    fn class_em_ascends_with_missing() {
        let (labeled, _, _) = two_class_data(3, 80, 1.0);
        let masked = crate::sim::inject_missing(labeled.data(), 0.1, 4).unwrap();
        let labeled = LabeledObservationSet::new(masked, labeled.labels().to_vec()).unwrap();
        let model = fit_class_models(&labeled, Method::Em, &FitConfig::default()).unwrap();
        assert!(model.converged);
        for w in model.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
    }

    #[test]
    fn pca_examples() {
        let id = pca(&SpdMatrix::identity(3), 3).unwrap();
        assert_eq!(id.eigenvalues, vec![1.0; 3]);
        assert!(id.fractions.iter().all(|f| (f - 1.0 / 3.0).abs() < 1e-15));

        // 3 on the all-ones direction, 1 elsewhere.
        let m = DenseMatrix::identity(3, 3) + DenseMatrix::from_element(3, 3, 2.0 / 3.0);
        let r = pca(&SpdMatrix::new(m).unwrap(), 3).unwrap();
        assert!((r.eigenvalues[0] - 3.0).abs() < 1e-12);
        assert!(r.fractions[0] > r.fractions[1] && r.fractions[0] > r.fractions[2]);
        for i in 0..3 {
            assert!((r.eigenvectors[(i, 0)] - 1.0 / 3f64.sqrt()).abs() < 1e-12);
        }
        assert!(pca(&SpdMatrix::identity(3), 4).is_err());
        assert!(pca(&SpdMatrix::identity(3), 0).is_err());
    }

    #[test]
    fn pca_invariants() {
        let mut g = rng(5);
        for _ in 0..20 {
            let s = random_spd(&mut g, 5);
            let r = pca(&s, 5).unwrap();
            assert!((r.eigenvalues.iter().sum::<f64>() - s.as_matrix().trace()).abs() < 1e-9);
            assert!((r.eigenvectors.transpose() * &r.eigenvectors - DenseMatrix::identity(5, 5)).amax() < 1e-10);
            assert!((r.fractions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((reconstruct(&r) - s.as_matrix()).amax() < 1e-9);
            assert!(r.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
            for j in 0..5 {
                let col = r.eigenvectors.column(j);
                assert!(col.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m }) > 0.0);
            }
        }
    }

    #[test]
    fn projection_examples() {
        let mut g = rng(6);
        let x = random_matrix(&mut g, 3, 4);
        let s = random_spd(&mut g, 3);
        let full = pca(&s, 3).unwrap();
        let y = project(&x, &full).unwrap();
        assert!((&full.eigenvectors * y - &x).amax() < 1e-10);
        let id = PcaResult {
            eigenvalues: vec![1.0, 1.0],
            eigenvectors: DenseMatrix::identity(3, 2),
            fractions: vec![1.0 / 3.0; 2],
        };
        assert_eq!(project(&x, &id).unwrap(), x.rows(0, 2).into_owned());
        let mut bad = x.clone();
        bad[(0, 0)] = f64::NAN;
        assert!(project(&bad, &full).is_err());
    }

    #[test]
    fn projected_variance_matches_eigenvalue() {
        let mut g = rng(7);
        let s = random_normalized_spd(&mut g, 3);
        let c = random_normalized_spd(&mut g, 2);
        let params = MatNormParams::new(DenseMatrix::zeros(3, 2), s.clone(), c.clone(), 0.8).unwrap();
        let r = pca(&s, 1).unwrap();
        let n = 40_000;
        let data = sample(&params, n, 8).unwrap();
        let var = data.iter().map(|x| project(x, &r).unwrap()[(0, 1)].powi(2)).sum::<f64>() / n as f64;
        let expected = r.eigenvalues[0] * c.get(1, 1) * 0.8;
        // Variance of a sample variance is 2σ⁴/n for a normal.
        assert!((var - expected).abs() < 5.0 * expected * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn distance_closed_forms() {
        let mut g = rng(9);
        let mu = random_matrix(&mut g, 4, 1);
        let a = random_spd(&mut g, 4);
        let b = random_spd(&mut g, 4);
        assert!(class_distance(&mu, &a, &mu, &b).unwrap().abs() < 1e-12);
        let nu = random_matrix(&mut g, 4, 1);
        let id = SpdMatrix::identity(4);
        let d = class_distance(&mu, &id, &nu, &id).unwrap();
        assert!((d - (&mu - &nu).norm_squared() / 2.0).abs() < 1e-12);
        assert!(class_distance(&mu, &a, &nu, &SpdMatrix::identity(3)).is_err());
    }

    proptest! {
        #[test]
        fn distance_is_symmetric_and_non_negative(seed in 0u64..10_000) {
            let mut g = rng(seed);
            let (mi, mj) = (random_matrix(&mut g, 4, 1), random_matrix(&mut g, 4, 1));
            let (a, b) = (random_spd(&mut g, 4), random_spd(&mut g, 4));
            let dij = class_distance(&mi, &a, &mj, &b).unwrap();
            let dji = class_distance(&mj, &b, &mi, &a).unwrap();
            prop_assert!((dij - dji).abs() <= 1e-12 * dij.abs().max(1.0));
            prop_assert!(dij > 0.0);
        }

        #[test]
        fn center_weights_sum_to_identity(seed in 0u64..10_000) {
            let mut g = rng(seed);
            let (a, b) = (random_spd(&mut g, 5), random_spd(&mut g, 5));
            let (pa, pb) = (a.inverse().unwrap().into_matrix(), b.inverse().unwrap().into_matrix());
            let s_inv = (&pa + &pb).try_inverse().unwrap();
            let total = &pa * &s_inv + &pb * &s_inv;
            prop_assert!((total - DenseMatrix::identity(5, 5)).amax() < 1e-10);
        }

        #[test]
        fn average_linkage_heights_are_monotone(seed in 0u64..10_000, k in 2usize..8) {
            let mut g = rng(seed);
            let pts = random_matrix(&mut g, 2, k);
            let d = DenseMatrix::from_fn(k, k, |i, j| (pts.column(i) - pts.column(j)).norm());
            let tree = hierarchical_cluster(&d).unwrap();
            prop_assert_eq!(tree.merges.len(), k - 1);
            prop_assert_eq!(tree.merges.last().unwrap().size, k);
            for w in tree.merges.windows(2) {
                prop_assert!(w[1].height >= w[0].height - 1e-12);
            }
        }
    }

    #[test]
    fn clustering_examples() {
        let d = DenseMatrix::from_row_slice(2, 2, &[0.0, 3.5, 3.5, 0.0]);
        let tree = hierarchical_cluster(&d).unwrap();
        assert_eq!(tree.merges, vec![Merge { left: 0, right: 1, height: 3.5, size: 2 }]);

        let d = DenseMatrix::from_row_slice(3, 3, &[0.0, 0.1, 5.0, 0.1, 0.0, 5.2, 5.0, 5.2, 0.0]);
        let tree = hierarchical_cluster(&d).unwrap();
        assert_eq!((tree.merges[0].left, tree.merges[0].right), (0, 1));
        assert_eq!((tree.merges[1].left, tree.merges[1].right), (2, 3));
        assert!((tree.merges[1].height - 5.1).abs() < 1e-12);

        // All ties: lowest ids merge first.
        let d = DenseMatrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 1.0 });
        let tree = hierarchical_cluster(&d).unwrap();
        assert_eq!((tree.merges[0].left, tree.merges[0].right), (0, 1));

        assert!(hierarchical_cluster(&DenseMatrix::zeros(1, 1)).is_err());
        assert!(hierarchical_cluster(&DenseMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0])).is_err());
    }

    #[test]
    fn classification() {
        let (labeled, _, _) = two_class_data(10, 200, 2.0);
        let model = fit_class_models(&labeled, Method::Em, &FitConfig::default()).unwrap();
        let r = pca_sigma_s(&model, 2).unwrap();
        let proj = projected_params(&model, &r).unwrap();

        // The class mean lands in its own class when covariances agree.
        let same: Vec<MatNormParams> = proj
            .iter()
            .map(|p| MatNormParams::new_unnormalized(p.mu().clone(), proj[0].sigma_s().clone(), proj[0].sigma_c().clone(), 1.0).unwrap())
            .collect();
        for (c, p) in same.iter().enumerate() {
            assert_eq!(classify_projected(p.mu(), &same).unwrap(), c + 1);
        }

        let (test, _, _) = two_class_data(10, 250, 2.0);
        let predicted: Vec<usize> =
            test.data().iter().map(|x| mle_classify(x, &model, &r).unwrap()).collect();
        let conf = confusion_matrix(test.labels(), &predicted, 2).unwrap();
        assert_eq!(conf.sum(), 500.0);
        assert!(accuracy(&conf) > 0.95, "accuracy {}", accuracy(&conf));
    }

    #[test]
    fn separability_orders_shifts() {
        let near = {
            let (d, _, _) = two_class_data(11, 200, 0.5);
            let m = fit_class_models(&d, Method::Em, &FitConfig::default()).unwrap();
            let r = pca_sigma_s(&m, 2).unwrap();
            separability(&project_completions(&m, &r).unwrap(), d.labels(), 2).unwrap()
        };
        let far = {
            let (d, _, _) = two_class_data(11, 200, 2.0);
            let m = fit_class_models(&d, Method::Em, &FitConfig::default()).unwrap();
            let r = pca_sigma_s(&m, 2).unwrap();
            separability(&project_completions(&m, &r).unwrap(), d.labels(), 2).unwrap()
        };
        assert!(far.total > near.total);
        assert_eq!(near.distances[(0, 1)], near.distances[(1, 0)]);
        assert_eq!(near.distances[(0, 0)], 0.0);
    }
}
