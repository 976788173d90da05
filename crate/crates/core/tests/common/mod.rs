#![allow(dead_code)]

use matnorm::linalg::{kron, submatrix, DenseMatrix, SpdMatrix};
use matnorm::MatNormParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(g: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
    DenseMatrix::from_fn(r, c, |_, _| g.sample::<f64, _>(StandardNormal))
}

pub fn spd(g: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
    let a = normal_matrix(g, n, n);
    &a * a.transpose() / n as f64 + DenseMatrix::identity(n, n) * 0.3
}

pub fn normalized_spd(g: &mut ChaCha8Rng, n: usize) -> SpdMatrix {
    let m = spd(g, n);
    SpdMatrix::new(&m / m[(0, 0)]).unwrap()
}

pub fn params(g: &mut ChaCha8Rng, p: usize, q: usize) -> MatNormParams {
    let mu = normal_matrix(g, p, q);
    let s = normalized_spd(g, p);
    let c = normalized_spd(g, q);
    let sigma2 = g.random_range(0.5..2.0);
    MatNormParams::new(mu, s, c, sigma2).unwrap()
}

pub fn with_missing(x: &DenseMatrix, cells: &[usize]) -> DenseMatrix {
    let mut out = x.clone();
    for &k in cells {
        out.as_mut_slice()[k] = f64::NAN;
    }
    out
}

pub fn frob_rel(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    (a - b).norm() / b.norm()
}

/// Textbook MVN conditioning on the explicit `σ² Σ_c ⊗ Σ_s`, through an LU
/// inverse of the observed block. Returns the completion and `Var[Z | Y]`.
pub fn condition_brute_force(x: &DenseMatrix, params: &MatNormParams) -> (DenseMatrix, DenseMatrix) {
    let full = kron(params.sigma_c().as_matrix(), params.sigma_s().as_matrix()).unwrap() * params.sigma2();
    let vals = x.as_slice();
    let mis: Vec<usize> = (0..x.len()).filter(|&k| vals[k].is_nan()).collect();
    let obs: Vec<usize> = (0..x.len()).filter(|&k| !vals[k].is_nan()).collect();
    let inv_oo = submatrix(&full, &obs, &obs).lu().try_inverse().unwrap();
    let coef = submatrix(&full, &mis, &obs) * inv_oo;
    let mu = params.mu().as_slice();
    let r = DenseMatrix::from_fn(obs.len(), 1, |a, _| vals[obs[a]] - mu[obs[a]]);
    let shift = &coef * r;
    let mut completion = x.clone();
    for (a, &k) in mis.iter().enumerate() {
        completion.as_mut_slice()[k] = mu[k] + shift[(a, 0)];
    }
    let cond = submatrix(&full, &mis, &mis) - coef * submatrix(&full, &obs, &mis);
    (completion, cond)
}

/// Nelder–Mead minimization with standard coefficients; restarts from the
/// best vertex until a restart no longer improves the minimum.
pub fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, start: &[f64], step: f64, max_evals: usize) -> (Vec<f64>, f64) {
    let mut best = start.to_vec();
    let mut best_f = f(&best);
    let mut evals = 0;
    loop {
        let (x, fx, used) = nm_run(f, &best, step, max_evals - evals.min(max_evals));
        evals += used;
        let improved = best_f - fx > 1e-15 * best_f.abs().max(1.0);
        if fx < best_f {
            best = x;
            best_f = fx;
        }
        if !improved || evals >= max_evals {
            return (best, best_f);
        }
    }
}

fn nm_run(f: &dyn Fn(&[f64]) -> f64, start: &[f64], step: f64, budget: usize) -> (Vec<f64>, f64, usize) {
    let n = start.len();
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut evals = n + 1;
    while evals < budget {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let spread = values[n] - values[0];
        let size = simplex[1..]
            .iter()
            .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread <= 1e-16 * values[0].abs().max(1.0) && size < 1e-10 {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (simplex[n][j] - centroid[j])).collect() };
        let xr = along(-1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let xc = along(-0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    simplex[i] = (0..n).map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j])).collect();
                    values[i] = f(&simplex[i]);
                }
                evals += n;
            }
        }
    }
    let i = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    (simplex[i].clone(), values[i], evals)
}
