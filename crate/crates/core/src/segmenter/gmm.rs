//! Diagonal-covariance Gaussian mixtures over CIELAB colors.

use std::f64::consts::PI;

const EM_ITERATIONS: usize = 10;
/// Variance floor per channel, in squared LAB units.
const MIN_VARIANCE: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ColorModel {
    weights: Vec<f64>,
    means: Vec<[f64; 3]>,
    variances: Vec<[f64; 3]>,
}

impl ColorModel {
    /// Fits up to `components` Gaussians by EM. Initial responsibilities
    /// come from splitting the samples, sorted by color, into contiguous
    /// runs, which keeps the fit deterministic.
    pub fn fit(samples: &[[f64; 3]], components: usize) -> Option<Self> {
        if samples.is_empty() || components == 0 {
            return None;
        }
        let k = components.min(samples.len());
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| {
            a[0].total_cmp(&b[0])
                .then(a[1].total_cmp(&b[1]))
                .then(a[2].total_cmp(&b[2]))
        });
        let n = sorted.len();
        let mut resp = vec![vec![0.0; k]; n];
        for (i, r) in resp.iter_mut().enumerate() {
            r[i * k / n] = 1.0;
        }
        let mut model = Self::m_step(&sorted, &resp, k);
        for _ in 0..EM_ITERATIONS {
            for (x, r) in sorted.iter().zip(resp.iter_mut()) {
                let logs: Vec<f64> = (0..k).map(|j| model.component_log_density(j, x)).collect();
                let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = logs.iter().map(|l| (l - max).exp()).sum();
                for (rj, l) in r.iter_mut().zip(&logs) {
                    *rj = (l - max).exp() / total;
                }
            }
            model = Self::m_step(&sorted, &resp, k);
        }
        Some(model)
    }

    fn m_step(samples: &[[f64; 3]], resp: &[Vec<f64>], k: usize) -> Self {
        let n = samples.len() as f64;
        let mut weights = vec![0.0; k];
        let mut means = vec![[0.0; 3]; k];
        let mut variances = vec![[0.0; 3]; k];
        for (x, r) in samples.iter().zip(resp) {
            for j in 0..k {
                weights[j] += r[j];
                for c in 0..3 {
                    means[j][c] += r[j] * x[c];
                }
            }
        }
        for j in 0..k {
            if weights[j] > 0.0 {
                for c in 0..3 {
                    means[j][c] /= weights[j];
                }
            }
        }
        for (x, r) in samples.iter().zip(resp) {
            for j in 0..k {
                for c in 0..3 {
                    variances[j][c] += r[j] * (x[c] - means[j][c]).powi(2);
                }
            }
        }
        for j in 0..k {
            for c in 0..3 {
                let v = if weights[j] > 0.0 {
                    variances[j][c] / weights[j]
                } else {
                    0.0
                };
                variances[j][c] = v.max(MIN_VARIANCE);
            }
        }
        // dead components keep a tiny weight so log densities stay finite
        let weights = weights.iter().map(|w| (w / n).max(1e-12)).collect();
        Self {
            weights,
            means,
            variances,
        }
    }

    fn component_log_density(&self, j: usize, x: &[f64; 3]) -> f64 {
        let mut log = self.weights[j].ln();
        for c in 0..3 {
            let v = self.variances[j][c];
            log -= 0.5 * ((2.0 * PI * v).ln() + (x[c] - self.means[j][c]).powi(2) / v);
        }
        log
    }

    pub fn log_likelihood(&self, x: &[f64; 3]) -> f64 {
        let logs: Vec<f64> = (0..self.weights.len())
            .map(|j| self.component_log_density(j, x))
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_two_clusters() {
        let mut samples = Vec::new();
        for i in 0..50 {
            let t = i as f64 / 50.0;
            samples.push([20.0 + t, 5.0, -5.0]);
            samples.push([80.0 - t, -30.0, 40.0]);
        }
        let m = ColorModel::fit(&samples, 3).unwrap();
        assert_eq!(m.components(), 3);
        assert!(m.log_likelihood(&[20.5, 5.0, -5.0]) > m.log_likelihood(&[50.0, 0.0, 0.0]));
        assert!(m.log_likelihood(&[79.5, -30.0, 40.0]) > m.log_likelihood(&[50.0, 0.0, 0.0]));
    }

    #[test]
    fn single_sample() {
        let m = ColorModel::fit(&[[50.0, 10.0, 10.0]], 3).unwrap();
        assert_eq!(m.components(), 1);
        assert!(m.log_likelihood(&[50.0, 10.0, 10.0]).is_finite());
        assert!(ColorModel::fit(&[], 3).is_none());
    }

    #[test]
    fn deterministic_under_sample_order() {
        let a: Vec<[f64; 3]> = (0..30).map(|i| [i as f64, (i * 7 % 11) as f64, 3.0]).collect();
        let mut b = a.clone();
        b.reverse();
        assert_eq!(ColorModel::fit(&a, 3), ColorModel::fit(&b, 3));
    }
}
