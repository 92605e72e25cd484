//! Quadratic least squares of a response on a standardized covariate.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Regression coefficients counted in the information criteria; the MLE
/// residual variance is profiled out.
pub const QUADRATIC_K: usize = 3;

pub fn aic(loglik: f64, k: usize) -> f64 {
    2.0 * k as f64 - 2.0 * loglik
}

pub fn bic(loglik: f64, k: usize, n: usize) -> f64 {
    k as f64 * (n as f64).ln() - 2.0 * loglik
}

/// Fit of `y = c0 + c1·z + c2·z²` with `z = (s − mean)/sd`.
///
/// `coeffs`, `ci95`, `p_values` refer to the standardized covariate;
/// the `raw_*` fields are the same fit expressed in the original units of `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFitReport {
    pub n: usize,
    pub k: usize,
    pub coeffs: [f64; 3],
    pub std_errors: [f64; 3],
    pub cov: [[f64; 3]; 3],
    pub ci95: [[f64; 2]; 3],
    pub t_values: [f64; 3],
    pub p_values: [f64; 3],
    pub raw_coeffs: [f64; 3],
    pub raw_ci95: [[f64; 2]; 3],
    pub covariate_mean: f64,
    pub covariate_sd: f64,
    pub rss: f64,
    pub r2: f64,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    /// Peak of the parabola when it opens downward, standardized units.
    pub vertex_z: Option<f64>,
    /// Same peak in the original units of `s`.
    pub vertex_s: Option<f64>,
}

impl QuadraticFitReport {
    /// Fitted response at covariate value `s` (original units).
    pub fn predict(&self, s: f64) -> f64 {
        let z = (s - self.covariate_mean) / self.covariate_sd;
        self.coeffs[0] + self.coeffs[1] * z + self.coeffs[2] * z * z
    }
}

pub fn quadratic_fit(x: &[f64], y: &[f64]) -> Result<QuadraticFitReport> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::InvalidArgument(format!("{n} covariates but {} responses", y.len())));
    }
    if n < 4 {
        return Err(Error::InsufficientData(format!("quadratic fit needs n >= 4, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite input".into()));
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let sd = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf).sqrt();
    if !(sd > 0.0) {
        return Err(Error::SingularDesign("covariate is constant".into()));
    }
    let z: Vec<f64> = x.iter().map(|v| (v - mean) / sd).collect();
    let design = DMatrix::from_fn(n, 3, |i, j| z[i].powi(j as i32));
    let yv = DVector::from_column_slice(y);

    let qr = design.clone().qr();
    let r = qr.r();
    let diag_max = (0..3).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..3).any(|i| r[(i, i)].abs() <= 1e-10 * diag_max) {
        return Err(Error::SingularDesign("design [1, s, s²] is rank deficient".into()));
    }
    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::SingularDesign("triangular solve failed".into()))?;

    let resid = &yv - &design * &beta;
    let rss = resid.norm_squared();
    let y_mean = yv.mean();
    let tss: f64 = y.iter().map(|v| (v - y_mean).powi(2)).sum();
    let r2 = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };

    let dof = nf - 3.0;
    let sigma2 = rss / dof;
    let r_inv = r
        .try_inverse()
        .ok_or_else(|| Error::SingularDesign("R not invertible".into()))?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let cov = Matrix3::from_fn(|i, j| sigma2 * xtx_inv[(i, j)]);

    let tdist = StudentsT::new(0.0, 1.0, dof).expect("dof > 0");
    let t_crit = tdist.inverse_cdf(0.975);
    let coeffs = [beta[0], beta[1], beta[2]];
    let se = [cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt(), cov[(2, 2)].sqrt()];
    let t_values = [0, 1, 2].map(|i| coeffs[i] / se[i]);
    let p_values = t_values.map(|t| {
        if t.is_nan() {
            1.0
        } else {
            2.0 * (1.0 - tdist.cdf(t.abs()))
        }
    });
    let ci95 = [0, 1, 2].map(|i| [coeffs[i] - t_crit * se[i], coeffs[i] + t_crit * se[i]]);

    // a = A·c maps standardized coefficients to the original scale of s.
    let (m, s) = (mean, sd);
    let a = Matrix3::new(
        1.0, -m / s, m * m / (s * s),
        0.0, 1.0 / s, -2.0 * m / (s * s),
        0.0, 0.0, 1.0 / (s * s),
    );
    let raw = a * Vector3::new(coeffs[0], coeffs[1], coeffs[2]);
    let raw_cov = a * cov * a.transpose();
    let raw_ci95 = [0, 1, 2].map(|i| {
        let half = t_crit * raw_cov[(i, i)].sqrt();
        [raw[i] - half, raw[i] + half]
    });

    let loglik = if rss > 0.0 {
        -0.5 * nf * ((2.0 * std::f64::consts::PI * rss / nf).ln() + 1.0)
    } else {
        f64::INFINITY
    };
    let vertex_z = (coeffs[2] < 0.0).then(|| -coeffs[1] / (2.0 * coeffs[2]));
    Ok(QuadraticFitReport {
        n,
        k: QUADRATIC_K,
        coeffs,
        std_errors: se,
        cov: [0, 1, 2].map(|i| [cov[(i, 0)], cov[(i, 1)], cov[(i, 2)]]),
        ci95,
        t_values,
        p_values,
        raw_coeffs: [raw[0], raw[1], raw[2]],
        raw_ci95,
        covariate_mean: mean,
        covariate_sd: sd,
        rss,
        r2,
        loglik,
        aic: aic(loglik, QUADRATIC_K),
        bic: bic(loglik, QUADRATIC_K, n),
        vertex_z,
        vertex_s: vertex_z.map(|v| mean + sd * v),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_quadratic_is_interpolated() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.37 - 2.0).collect();
        let y: Vec<f64> = x.iter().map(|s| 1.5 - 0.7 * s - 2.25 * s * s).collect();
        let rep = quadratic_fit(&x, &y).unwrap();
        assert!((rep.r2 - 1.0).abs() < 1e-12);
        assert!(rep.rss < 1e-20);
        for (got, want) in rep.raw_coeffs.iter().zip([1.5, -0.7, -2.25]) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
        let vs = rep.vertex_s.unwrap();
        assert!((vs - (-0.7 / (2.0 * 2.25))).abs() < 1e-10);
    }

    #[test]
    fn constant_covariate_is_singular() {
        let x = vec![2.0; 10];
        let y: Vec<f64> = (0..10).map(f64::from).collect();
        assert!(matches!(quadratic_fit(&x, &y), Err(Error::SingularDesign(_))));
    }

    #[test]
    fn two_level_covariate_is_singular() {
        let x: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
        let y: Vec<f64> = (0..10).map(f64::from).collect();
        assert!(matches!(quadratic_fit(&x, &y), Err(Error::SingularDesign(_))));
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(
            quadratic_fit(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn information_criteria_identities() {
        assert_eq!(aic(-1860.5, 3), 3727.0);
        assert_eq!(aic(-1869.0, 3), 3744.0);
        assert_eq!(bic(-1860.5, 3, 2508).round(), 3744.0);
        assert_eq!(bic(-1869.0, 3, 2508).round(), 3761.0);
    }
}
