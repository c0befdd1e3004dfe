//! Linear and multinomial logistic regression trained by full-batch gradient
//! descent on z-scaled inputs.

use super::design::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearOptions {
    pub max_iter: usize,
    /// L2 penalty on the weights (not the intercepts).
    pub l2: f64,
}

impl Default for LinearOptions {
    fn default() -> Self {
        LinearOptions { max_iter: 500, l2: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Scaler {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Scaler {
    fn fit(x: &Matrix) -> Self {
        let n = x.rows.max(1) as f64;
        let mut mean = vec![0.0; x.cols];
        for i in 0..x.rows {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; x.cols];
        for i in 0..x.rows {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
        Scaler { mean, scale }
    }

    fn apply(&self, row: &[f64], out: &mut [f64]) {
        for (k, v) in row.iter().enumerate() {
            out[k] = (v - self.mean[k]) / self.scale[k];
        }
    }

    fn transform(&self, x: &Matrix) -> Matrix {
        let mut m = Matrix::zeros(x.rows, x.cols);
        for i in 0..x.rows {
            self.apply(x.row(i), &mut m.data[i * x.cols..(i + 1) * x.cols]);
        }
        m
    }
}

/// Largest eigenvalue of `[x 1]ᵀ[x 1] / n` by power iteration, used to pick a
/// step size that cannot diverge.
fn lipschitz(x: &Matrix) -> f64 {
    let p = x.cols + 1;
    let mut v = vec![1.0 / (p as f64).sqrt(); p];
    let mut lambda = 1.0;
    for _ in 0..50 {
        let mut w = vec![0.0; p];
        for i in 0..x.rows {
            let r = x.row(i);
            let dot: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + v[p - 1];
            for (k, a) in r.iter().enumerate() {
                w[k] += a * dot;
            }
            w[p - 1] += dot;
        }
        let n = x.rows.max(1) as f64;
        w.iter_mut().for_each(|x| *x /= n);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        lambda = norm;
        v = w.into_iter().map(|x| x / norm).collect();
    }
    lambda.max(1e-12)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticRegression {
    scaler: Scaler,
    /// `(p + 1) × k`, last row the intercepts.
    weights: Vec<f64>,
    n_classes: usize,
}

impl LogisticRegression {
    pub fn fit(x: &Matrix, labels: &[usize], n_classes: usize, opts: LinearOptions) -> Self {
        let scaler = Scaler::fit(x);
        let z = scaler.transform(x);
        let (p, k, n) = (x.cols, n_classes, x.rows as f64);
        // the softmax cross-entropy Hessian is bounded by half the Gram matrix
        let lr = 2.0 / lipschitz(&z);
        let mut w = vec![0.0; (p + 1) * k];
        let mut probs = vec![0.0; k];
        for _ in 0..opts.max_iter {
            let mut grad = vec![0.0; (p + 1) * k];
            for (i, &y) in labels.iter().enumerate() {
                let r = z.row(i);
                softmax_row(r, &w, k, &mut probs);
                probs[y] -= 1.0;
                for (f, a) in r.iter().chain(std::iter::once(&1.0)).enumerate() {
                    for c in 0..k {
                        grad[f * k + c] += a * probs[c] / n;
                    }
                }
            }
            for f in 0..p {
                for c in 0..k {
                    grad[f * k + c] += opts.l2 * w[f * k + c];
                }
            }
            for (wi, g) in w.iter_mut().zip(&grad) {
                *wi -= lr * g;
            }
        }
        LogisticRegression { scaler, weights: w, n_classes }
    }

    pub fn predict_proba(&self, row: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; row.len()];
        self.scaler.apply(row, &mut z);
        let mut out = vec![0.0; self.n_classes];
        softmax_row(&z, &self.weights, self.n_classes, &mut out);
        out
    }
}

fn softmax_row(r: &[f64], w: &[f64], k: usize, out: &mut [f64]) {
    let p = r.len();
    for c in 0..k {
        out[c] = w[p * k + c] + r.iter().enumerate().map(|(f, a)| a * w[f * k + c]).sum::<f64>();
    }
    let m = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - m).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearRegression {
    scaler: Scaler,
    weights: Vec<f64>,
    intercept: f64,
    y_mean: f64,
    y_scale: f64,
}

impl LinearRegression {
    pub fn fit(x: &Matrix, y: &[f64], opts: LinearOptions) -> Self {
        let scaler = Scaler::fit(x);
        let z = scaler.transform(x);
        let n = y.len().max(1) as f64;
        let y_mean = y.iter().sum::<f64>() / n;
        let y_var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n;
        let y_scale = if y_var > 1e-24 { y_var.sqrt() } else { 1.0 };
        let t: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();
        let p = x.cols;
        let lr = 1.0 / lipschitz(&z);
        let mut w = vec![0.0; p];
        let mut b = 0.0;
        for _ in 0..opts.max_iter {
            let mut gw = vec![0.0; p];
            let mut gb = 0.0;
            for (i, ti) in t.iter().enumerate() {
                let r = z.row(i);
                let err = b + r.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() - ti;
                for (g, a) in gw.iter_mut().zip(r) {
                    *g += err * a / n;
                }
                gb += err / n;
            }
            for (wi, g) in w.iter_mut().zip(&gw) {
                *wi -= lr * (g + opts.l2 * *wi);
            }
            b -= lr * gb;
        }
        LinearRegression { scaler, weights: w, intercept: b, y_mean, y_scale }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut z = vec![0.0; row.len()];
        self.scaler.apply(row, &mut z);
        let s = self.intercept + z.iter().zip(&self.weights).map(|(a, c)| a * c).sum::<f64>();
        self.y_mean + self.y_scale * s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_data_is_classified_perfectly() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, (i * 7 % 5) as f64]).collect();
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        let x = Matrix::from_rows(&rows);
        let m = LogisticRegression::fit(&x, &labels, 2, LinearOptions::default());
        for (i, &y) in labels.iter().enumerate() {
            let p = m.predict_proba(x.row(i));
            assert_eq!(usize::from(p[1] > p[0]), y, "row {i}: {p:?}");
        }
    }

    #[test]
    fn recovers_a_linear_function() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 / 10.0, ((i * 13) % 7) as f64]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 3.0 * r[0] - 2.0 * r[1] + 1.0).collect();
        let x = Matrix::from_rows(&rows);
        let m = LinearRegression::fit(&x, &y, LinearOptions { max_iter: 2000, l2: 0.0 });
        for (r, t) in rows.iter().zip(&y) {
            assert!((m.predict(r) - t).abs() < 1e-3);
        }
    }
}
