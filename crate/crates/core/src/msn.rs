//! Multivariate skew-normal distribution: density, the `delta` transform,
//! reparameterized sampling and the analytic mean.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::ModelError;
use crate::tensor::{cholesky, solve_lower, Matrix};

/// Location `xi`, scale `omega`, correlation `psi` and shape `alpha`.
#[derive(Clone, Debug, PartialEq)]
pub struct MsnRowParams {
    pub xi: Vec<f64>,
    pub omega: Vec<f64>,
    pub psi: Matrix,
    pub alpha: Vec<f64>,
}

impl MsnRowParams {
    pub fn dim(&self) -> usize {
        self.xi.len()
    }

    /// `Sigma = diag(omega) psi diag(omega)`
    pub fn covariance(&self) -> Matrix {
        let n = self.dim();
        let mut s = self.psi.clone();
        for i in 0..n {
            for j in 0..n {
                s[(i, j)] *= self.omega[i] * self.omega[j];
            }
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MsnSample {
    pub z: Vec<f64>,
    pub y0: f64,
    /// Correlated normal draw `y ~ N(0, psi)`.
    pub y: Vec<f64>,
}

/// Standard normal CDF.
pub fn std_normal_cdf(t: f64) -> f64 {
    0.5 * libm::erfc(-t / std::f64::consts::SQRT_2)
}

/// `f(x) = 2 phi_k(x; xi, Sigma) Phi(alpha^T omega^{-1} (x - xi))`
pub fn density(x: &[f64], params: &MsnRowParams) -> Result<f64, ModelError> {
    let n = params.dim();
    let sigma = params.covariance();
    let l = cholesky(&sigma).ok_or(ModelError::CholeskyFailed { dim: n })?;
    let resid: Vec<f64> = x.iter().zip(&params.xi).map(|(a, b)| a - b).collect();
    let w = solve_lower(&l, &Matrix::from_vec(n, 1, resid.clone()));
    let quad = w.sum_sq();
    let log_det: f64 = (0..n).map(|i| 2.0 * l[(i, i)].ln()).sum();
    let log_phi = -0.5 * (quad + log_det + n as f64 * (2.0 * std::f64::consts::PI).ln());
    let skew_arg: f64 = (0..n).map(|i| params.alpha[i] * resid[i] / params.omega[i]).sum();
    Ok(2.0 * log_phi.exp() * std_normal_cdf(skew_arg))
}

/// `delta_j = alpha_j / sqrt(1 + alpha_j^2)`, kept strictly inside (-1, 1).
pub fn delta(alpha: &[f64]) -> Vec<f64> {
    const EDGE: f64 = 1.0 - f64::EPSILON / 2.0;
    alpha
        .iter()
        .map(|&a| {
            let d = if a.abs() > 1.0 {
                a.signum() / (1.0 + 1.0 / (a * a)).sqrt()
            } else {
                a / (1.0 + a * a).sqrt()
            };
            d.clamp(-EDGE, EDGE)
        })
        .collect()
}

/// Draws `y0 ~ N(0, 1)` and `eps ~ N(0, I)` and applies [`sample_with_noise`].
pub fn sample(params: &MsnRowParams, rng: &mut impl Rng) -> Result<MsnSample, ModelError> {
    let y0: f64 = rng.sample(StandardNormal);
    let eps: Vec<f64> = (0..params.dim()).map(|_| rng.sample(StandardNormal)).collect();
    sample_with_noise(params, y0, &eps)
}

/// `y = chol(psi) eps`, `z_j = xi_j + omega_j (delta_j |y0| + sqrt(1 - delta_j^2) y_j)`.
pub fn sample_with_noise(params: &MsnRowParams, y0: f64, eps: &[f64]) -> Result<MsnSample, ModelError> {
    let n = params.dim();
    let l = cholesky(&params.psi).ok_or(ModelError::CholeskyFailed { dim: n })?;
    let y: Vec<f64> = (0..n)
        .map(|j| (0..=j).map(|k| l[(j, k)] * eps[k]).sum())
        .collect();
    let d = delta(&params.alpha);
    let z = (0..n)
        .map(|j| {
            // 1 - delta^2 == 1 / (1 + alpha^2), without cancellation
            let tail = 1.0 / (1.0 + params.alpha[j] * params.alpha[j]).sqrt();
            params.xi[j] + params.omega[j] * (d[j] * y0.abs() + tail * y[j])
        })
        .collect();
    Ok(MsnSample { z, y0, y })
}

/// `E[z] = xi + omega delta sqrt(2 / pi)`
pub fn mean_shift(params: &MsnRowParams) -> Vec<f64> {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    delta(&params.alpha)
        .iter()
        .enumerate()
        .map(|(j, d)| params.xi[j] + params.omega[j] * d * c)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_d(xi: f64, omega: f64, alpha: f64) -> MsnRowParams {
        MsnRowParams {
            xi: vec![xi],
            omega: vec![omega],
            psi: Matrix::identity(1),
            alpha: vec![alpha],
        }
    }

    const PEAK: f64 = 0.3989422804014327;

    #[test]
    fn density_examples() {
        assert!((density(&[0.0], &one_d(0.0, 1.0, 0.0)).unwrap() - PEAK).abs() < 1e-15);
        assert!((density(&[0.0], &one_d(0.0, 1.0, 1.0)).unwrap() - PEAK).abs() < 1e-15);
        assert!(density(&[0.5], &one_d(0.0, 1.0, 5.0)).unwrap() > density(&[-0.5], &one_d(0.0, 1.0, 5.0)).unwrap());
    }

    #[test]
    fn zero_shape_density_is_gaussian() {
        let p = MsnRowParams {
            xi: vec![0.5, -1.0],
            omega: vec![1.5, 0.7],
            psi: Matrix::from_rows(&[vec![1.0, 0.4], vec![0.4, 1.0]]),
            alpha: vec![0.0, 0.0],
        };
        let x = [0.1, -0.3];
        // Bivariate normal written out by hand.
        let (s1, s2, rho): (f64, f64, f64) = (1.5, 0.7, 0.4);
        let (u, v) = ((x[0] - 0.5) / s1, (x[1] + 1.0) / s2);
        let q = (u * u - 2.0 * rho * u * v + v * v) / (1.0 - rho * rho);
        let want = (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * s1 * s2 * (1.0 - rho * rho).sqrt());
        assert!((density(&x, &p).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn singular_covariance_is_an_error() {
        let p = MsnRowParams {
            xi: vec![0.0, 0.0],
            omega: vec![1.0, 1.0],
            psi: Matrix::filled(2, 2, 1.0),
            alpha: vec![0.0, 0.0],
        };
        assert!(matches!(density(&[0.0, 0.0], &p), Err(ModelError::CholeskyFailed { .. })));
    }

    #[test]
    fn delta_examples() {
        assert_eq!(delta(&[0.0]), vec![0.0]);
        assert!((delta(&[1.0])[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        let big = delta(&[1e8, -1e8]);
        assert!(big[0] < 1.0 && big[0] > 1.0 - 1e-15);
        assert_eq!(big[1], -big[0]);
    }

    #[test]
    fn mean_shift_examples() {
        assert_eq!(mean_shift(&one_d(1.5, 2.0, 0.0)), vec![1.5]);
        let m = mean_shift(&one_d(0.0, 1.0, 1.0))[0];
        assert!((m - 0.5641895835477563).abs() < 1e-15);
        assert_eq!(mean_shift(&one_d(0.25, 0.0, 3.0)), vec![0.25]);
    }

    #[test]
    fn gaussian_reduction_mean() {
        let p = MsnRowParams {
            xi: vec![1.0, -2.0],
            omega: vec![0.5, 2.0],
            psi: Matrix::identity(2),
            alpha: vec![0.0, 0.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut sums = [0.0; 2];
        for _ in 0..n {
            let s = sample(&p, &mut rng).unwrap();
            sums[0] += s.z[0];
            sums[1] += s.z[1];
        }
        for j in 0..2 {
            let mean = sums[j] / n as f64;
            assert!((mean - p.xi[j]).abs() < 3.0 * p.omega[j] / (n as f64).sqrt());
        }
    }

    #[test]
    fn vanishing_scale_returns_location() {
        let p = MsnRowParams {
            xi: vec![0.3, -0.7, 1.1],
            omega: vec![1e-300; 3],
            psi: Matrix::identity(3),
            alpha: vec![2.0, -1.0, 0.0],
        };
        let s = sample(&p, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(s.z, p.xi);
    }

    #[test]
    fn skewness_matches_closed_form() {
        let alpha: f64 = 3.0;
        let d = alpha / (1.0 + alpha * alpha).sqrt();
        let b = d * (2.0 / std::f64::consts::PI).sqrt();
        let want = (4.0 - std::f64::consts::PI) / 2.0 * b.powi(3) / (1.0 - b * b).powf(1.5);
        assert!((want - 0.6670).abs() < 1e-3);
        let p = one_d(0.0, 1.0, alpha);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let xs: Vec<f64> = (0..100_000).map(|_| sample(&p, &mut rng).unwrap().z[0]).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
        let skew = m3 / m2.powf(1.5);
        assert!((skew - want).abs() < 0.05, "skewness {skew} vs {want}");
    }

    #[test]
    fn same_seed_same_draw() {
        let p = MsnRowParams {
            xi: vec![0.1, 0.2],
            omega: vec![1.0, 0.5],
            psi: Matrix::from_rows(&[vec![1.0, -0.3], vec![-0.3, 1.0]]),
            alpha: vec![1.0, -2.0],
        };
        let a = sample(&p, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        let b = sample(&p, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        assert_eq!(a, b);
    }

    proptest::proptest! {
        #[test]
        fn delta_is_odd_monotone_and_bounded(a in -1e6f64..1e6, b in -1e6f64..1e6) {
            let d = delta(&[a, b, -a]);
            proptest::prop_assert!(d[0].abs() < 1.0);
            proptest::prop_assert_eq!(d[2], -d[0]);
            if a < b {
                proptest::prop_assert!(d[0] <= d[1]);
            }
        }
    }
}
