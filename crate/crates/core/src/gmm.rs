//! Full-covariance Gaussian mixtures fitted by expectation maximisation.
//!
//! Points are stored row-major in a flat slice of length `n * dim`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error, PartialEq)]
pub enum GmmError {
    #[error("no data points")]
    Empty,
    #[error("data length {len} is not a multiple of dimension {dim}")]
    Ragged { len: usize, dim: usize },
    #[error("{components} components need at least as many distinct points, found {distinct}")]
    TooFewPoints { distinct: usize, components: usize },
    #[error("covariance of component {0} is not positive definite")]
    Degenerate(usize),
    #[error("non-finite value in data")]
    NonFinite,
    #[error("invalid mixture: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major `dim × dim`.
    pub cov: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm {
    pub dim: usize,
    pub components: Vec<Component>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub components: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// Added to every covariance diagonal after each M-step.
    pub var_floor: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { components: 1, max_iter: 200, tol: 1e-6, var_floor: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Fit {
    pub gmm: Gmm,
    /// Mean log-likelihood per point after each E-step.
    pub history: Vec<f64>,
    pub converged: bool,
}

/// Lower-triangular Cholesky factor of a row-major SPD matrix.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let d = a[i * n + i] - s;
                if !(d > 0.0) || !d.is_finite() {
                    return None;
                }
                l[i * n + i] = d.sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    Some(l)
}

struct Factored {
    log_weight: f64,
    mean: Vec<f64>,
    chol: Vec<f64>,
    half_log_det: f64,
}

impl Factored {
    fn log_pdf(&self, x: &[f64], dim: usize) -> f64 {
        // solve L y = x - mean by forward substitution
        let mut y = vec![0.0; dim];
        let mut maha = 0.0;
        for i in 0..dim {
            let s: f64 = (0..i).map(|k| self.chol[i * dim + k] * y[k]).sum();
            y[i] = (x[i] - self.mean[i] - s) / self.chol[i * dim + i];
            maha += y[i] * y[i];
        }
        self.log_weight - 0.5 * (dim as f64 * LN_2PI + maha) - self.half_log_det
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl Gmm {
    pub fn validate(&self) -> Result<(), GmmError> {
        if self.components.is_empty() {
            return Err(GmmError::Invalid("no components".into()));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 || self.components.iter().any(|c| !(c.weight >= 0.0)) {
            return Err(GmmError::Invalid(format!("weights sum to {total}")));
        }
        for (i, c) in self.components.iter().enumerate() {
            if c.mean.len() != self.dim || c.cov.len() != self.dim * self.dim {
                return Err(GmmError::Invalid(format!("component {i} has the wrong shape")));
            }
            cholesky(&c.cov, self.dim).ok_or(GmmError::Degenerate(i))?;
        }
        Ok(())
    }

    fn factor(&self) -> Result<Vec<Factored>, GmmError> {
        self.components
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let chol = cholesky(&c.cov, self.dim).ok_or(GmmError::Degenerate(i))?;
                let half_log_det = (0..self.dim).map(|k| chol[k * self.dim + k].ln()).sum();
                Ok(Factored { log_weight: c.weight.ln(), mean: c.mean.clone(), chol, half_log_det })
            })
            .collect()
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64, GmmError> {
        assert_eq!(x.len(), self.dim);
        let f = self.factor()?;
        let parts: Vec<f64> = f.iter().map(|c| c.log_pdf(x, self.dim)).collect();
        Ok(log_sum_exp(&parts))
    }

    /// Average log-density over the points in `data`.
    pub fn mean_log_likelihood(&self, data: &[f64]) -> Result<f64, GmmError> {
        let n = check_data(data, self.dim)?;
        let f = self.factor()?;
        let mut parts = vec![0.0; f.len()];
        let mut total = 0.0;
        for x in data.chunks_exact(self.dim) {
            for (p, c) in parts.iter_mut().zip(&f) {
                *p = c.log_pdf(x, self.dim);
            }
            total += log_sum_exp(&parts);
        }
        Ok(total / n as f64)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                pick = i;
                break;
            }
        }
        let c = &self.components[pick];
        let chol = cholesky(&c.cov, self.dim).expect("validated covariance");
        let z: Vec<f64> = (0..self.dim).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        (0..self.dim).map(|i| c.mean[i] + (0..=i).map(|k| chol[i * self.dim + k] * z[k]).sum::<f64>()).collect()
    }
}

fn check_data(data: &[f64], dim: usize) -> Result<usize, GmmError> {
    if dim == 0 || data.is_empty() {
        return Err(GmmError::Empty);
    }
    if !data.len().is_multiple_of(dim) {
        return Err(GmmError::Ragged { len: data.len(), dim });
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(GmmError::NonFinite);
    }
    Ok(data.len() / dim)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by a few Lloyd iterations; returns centres.
fn kmeans_init(data: &[f64], dim: usize, k: usize, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    let points: Vec<&[f64]> = data.chunks_exact(dim).collect();
    let mut centres: Vec<Vec<f64>> = vec![points[rng.gen_range(0..points.len())].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centres[0])).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.gen_range(0..points.len())
        };
        centres.push(points[next].to_vec());
        for (d, p) in d2.iter_mut().zip(&points) {
            *d = d.min(sq_dist(p, centres.last().unwrap()));
        }
    }
    for _ in 0..10 {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for p in &points {
            let j = nearest(p, &centres);
            counts[j] += 1;
            for (s, x) in sums[j].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centres[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
    }
    centres
}

fn nearest(p: &[f64], centres: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centres.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Weighted means and covariances from responsibilities `resp` (`n × k`).
fn m_step(data: &[f64], dim: usize, resp: &[f64], k: usize, var_floor: f64) -> Gmm {
    let n = data.len() / dim;
    let mut components = Vec::with_capacity(k);
    for j in 0..k {
        let nk: f64 = (0..n).map(|i| resp[i * k + j]).sum::<f64>() + 10.0 * f64::EPSILON;
        let mut mean = vec![0.0; dim];
        for (i, x) in data.chunks_exact(dim).enumerate() {
            let r = resp[i * k + j];
            for (m, v) in mean.iter_mut().zip(x) {
                *m += r * v;
            }
        }
        for m in &mut mean {
            *m /= nk;
        }
        let mut cov = vec![0.0; dim * dim];
        for (i, x) in data.chunks_exact(dim).enumerate() {
            let r = resp[i * k + j];
            for a in 0..dim {
                let da = x[a] - mean[a];
                for b in 0..=a {
                    cov[a * dim + b] += r * da * (x[b] - mean[b]);
                }
            }
        }
        for a in 0..dim {
            for b in 0..=a {
                let v = cov[a * dim + b] / nk;
                cov[a * dim + b] = v;
                cov[b * dim + a] = v;
            }
            cov[a * dim + a] += var_floor;
        }
        components.push(Component { weight: nk / n as f64, mean, cov });
    }
    let total: f64 = components.iter().map(|c| c.weight).sum();
    for c in &mut components {
        c.weight /= total;
    }
    Gmm { dim, components }
}

/// Fits a mixture of `opts.components` Gaussians. Stops once the mean
/// log-likelihood improves by less than `opts.tol` or after `opts.max_iter`
/// E-steps.
pub fn fit(data: &[f64], dim: usize, opts: &FitOptions) -> Result<Fit, GmmError> {
    let n = check_data(data, dim)?;
    let k = opts.components;
    if k == 0 {
        return Err(GmmError::Invalid("zero components".into()));
    }
    let mut distinct: Vec<&[f64]> = data.chunks_exact(dim).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < k {
        return Err(GmmError::TooFewPoints { distinct: distinct.len(), components: k });
    }
    let mut rng = rng::stream(opts.seed, "gmm");
    let centres = kmeans_init(data, dim, k, &mut rng);
    let mut resp = vec![0.0; n * k];
    for (i, x) in data.chunks_exact(dim).enumerate() {
        resp[i * k + nearest(x, &centres)] = 1.0;
    }
    let mut gmm = m_step(data, dim, &resp, k, opts.var_floor);
    let mut history: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut parts = vec![0.0; k];
    for _ in 0..opts.max_iter {
        let f = gmm.factor()?;
        let mut total = 0.0;
        for (i, x) in data.chunks_exact(dim).enumerate() {
            for (p, c) in parts.iter_mut().zip(&f) {
                *p = c.log_pdf(x, dim);
            }
            let lse = log_sum_exp(&parts);
            total += lse;
            for j in 0..k {
                resp[i * k + j] = (parts[j] - lse).exp();
            }
        }
        let ll = total / n as f64;
        if let Some(&prev) = history.last() {
            debug_assert!(ll >= prev - 1e-9 * (1.0 + prev.abs()), "EM log-likelihood fell from {prev} to {ll}");
            history.push(ll);
            if ll - prev < opts.tol {
                converged = true;
                break;
            }
        } else {
            history.push(ll);
        }
        gmm = m_step(data, dim, &resp, k, opts.var_floor);
    }
    Ok(Fit { gmm, history, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn cholesky_recovers_factor() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let l = cholesky(&a, 2).unwrap();
        assert_eq!(l[0], 2.0);
        assert_eq!(l[2], 1.0);
        assert!((l[3] - 2f64.sqrt()).abs() < 1e-15);
        assert!(cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
    }

    #[test]
    fn standard_normal_density_at_mean() {
        let g = Gmm {
            dim: 2,
            components: vec![Component { weight: 1.0, mean: vec![0.0, 0.0], cov: vec![1.0, 0.0, 0.0, 1.0] }],
        };
        assert!((g.log_density(&[0.0, 0.0]).unwrap() + LN_2PI).abs() < 1e-12);
    }

    #[test]
    fn too_few_points() {
        let err = fit(&[1.0, 1.0, 1.0], 1, &FitOptions { components: 2, ..FitOptions::default() }).unwrap_err();
        assert_eq!(err, GmmError::TooFewPoints { distinct: 1, components: 2 });
    }

    #[test]
    fn recovers_separated_means() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..4000)
            .map(|i| if i % 2 == 0 { -5.0 } else { 5.0 } + r.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let fit = fit(&data, 1, &FitOptions { components: 2, ..FitOptions::default() }).unwrap();
        let mut means: Vec<f64> = fit.gmm.components.iter().map(|c| c.mean[0]).collect();
        means.sort_by(f64::total_cmp);
        assert!((means[0] + 5.0).abs() < 0.1 && (means[1] - 5.0).abs() < 0.1, "{means:?}");
        assert!(fit.history.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        assert!(fit.converged);
    }
}
