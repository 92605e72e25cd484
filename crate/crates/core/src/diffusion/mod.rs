//! Forward noising process, reverse step, and the per-sample variational
//! bound on `-log p(x0)`.
//!
//! Steps are 1-based throughout. The reverse process uses the fixed variance
//! `σ_t² = β_t·(1−ᾱ_{t−1})/(1−ᾱ_t)` (and `σ_1² = β_1`), and the network is an
//! ε-predictor, so every bound term reduces to a weighted squared error.

mod elbo;
mod schedule;
mod tensor;

pub use elbo::{ancestral_sample, elbo, ElboBreakdown, ElboMode};
pub use schedule::{make_schedule, NoiseSchedule, ScheduleKind, ScheduleSpec};
pub use tensor::Tensor;

use std::f64::consts::PI;

use crate::error::Result;

/// Anything that predicts the noise component of `x_t` at step `t`.
pub trait NoisePredictor {
    fn predict_noise(&self, xt: &Tensor, t: usize) -> Result<Tensor>;
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &P {
    fn predict_noise(&self, xt: &Tensor, t: usize) -> Result<Tensor> {
        (**self).predict_noise(xt, t)
    }
}

/// Closed-form marginal `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
pub fn forward_sample(x0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_step(t, 1)?;
    let ab = sched.alpha_bar(t);
    x0.axpby(ab.sqrt(), eps, (1.0 - ab).sqrt())
}

/// Mean of the reverse step, `μ_θ(x_t, t)`.
pub fn reverse_mean<P: NoisePredictor>(
    model: &P,
    xt: &Tensor,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    sched.check_step(t, 1)?;
    let eps_hat = model.predict_noise(xt, t)?;
    let inv_sqrt_alpha = 1.0 / sched.alpha(t).sqrt();
    let coef = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    xt.axpby(inv_sqrt_alpha, &eps_hat, -coef * inv_sqrt_alpha)
}

/// One ancestral step `x_{t−1} = μ_θ(x_t, t) + σ_t·noise`.
pub fn reverse_step<P: NoisePredictor>(
    model: &P,
    xt: &Tensor,
    t: usize,
    sched: &NoiseSchedule,
    noise: &Tensor,
) -> Result<Tensor> {
    let mean = reverse_mean(model, xt, t, sched)?;
    mean.axpby(1.0, noise, sched.reverse_variance(t).sqrt())
}

/// KL term for step `t >= 2`: `½·(SNR(t−1)/SNR(t) − 1)·‖ε − ε̂_θ(x_t, t)‖²`.
pub fn diffusion_loss_term<P: NoisePredictor>(
    x0: &Tensor,
    t: usize,
    model: &P,
    sched: &NoiseSchedule,
    eps: &Tensor,
) -> Result<f64> {
    sched.check_step(t, 2)?;
    let xt = forward_sample(x0, t, eps, sched)?;
    let eps_hat = model.predict_noise(&xt, t)?;
    Ok(sched.diffusion_weight(t) * eps.squared_distance(&eps_hat)?)
}

/// KL of `N(√ᾱ·x0, (1−ᾱ)I)` from `N(0, I)` for a given final `ᾱ`.
pub fn prior_kl(x0: &Tensor, alpha_bar_final: f64) -> f64 {
    let var = 1.0 - alpha_bar_final;
    // (1−ᾱ) − 1 − ln(1−ᾱ) = −ᾱ − ln(1−ᾱ), evaluated stably
    let per_dim = -alpha_bar_final - (-alpha_bar_final).ln_1p();
    let per_dim = if var == 0.0 { f64::INFINITY } else { per_dim };
    0.5 * (alpha_bar_final * x0.squared_norm() + x0.len() as f64 * per_dim)
}

pub fn prior_loss(x0: &Tensor, sched: &NoiseSchedule) -> f64 {
    prior_kl(x0, sched.alpha_bar_final())
}

/// Isotropic Gaussian negative log-density `−log N(x; mean, var·I)`.
pub fn gaussian_nll(x: &Tensor, mean: &Tensor, var: f64) -> Result<f64> {
    let sq = x.squared_distance(mean)?;
    Ok(0.5 * (x.len() as f64 * (2.0 * PI * var).ln() + sq / var))
}

/// `−log p_θ(x0 | x1)` with `x1` drawn from the forward marginal using `eps`.
pub fn reconstruction_loss<P: NoisePredictor>(
    x0: &Tensor,
    model: &P,
    sched: &NoiseSchedule,
    eps: &Tensor,
) -> Result<f64> {
    let x1 = forward_sample(x0, 1, eps, sched)?;
    let mean = reverse_mean(model, &x1, 1, sched)?;
    gaussian_nll(x0, &mean, sched.reverse_variance(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    struct Zero;
    impl NoisePredictor for Zero {
        fn predict_noise(&self, xt: &Tensor, _t: usize) -> Result<Tensor> {
            Ok(Tensor::zeros(xt.shape()))
        }
    }

    /// Returns the exact noise that produced `x_t` from a known `x0`.
    struct Oracle<'a> {
        x0: &'a Tensor,
        sched: &'a NoiseSchedule,
    }
    impl NoisePredictor for Oracle<'_> {
        fn predict_noise(&self, xt: &Tensor, t: usize) -> Result<Tensor> {
            let ab = self.sched.alpha_bar(t);
            xt.axpby(1.0 / (1.0 - ab).sqrt(), self.x0, -ab.sqrt() / (1.0 - ab).sqrt())
        }
    }

    /// Predicts a constant tensor regardless of input.
    struct Constant(Tensor);
    impl NoisePredictor for Constant {
        fn predict_noise(&self, _xt: &Tensor, _t: usize) -> Result<Tensor> {
            Ok(self.0.clone())
        }
    }

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    fn sched() -> NoiseSchedule {
        ScheduleSpec::default().build().unwrap()
    }

    #[test]
    fn forward_with_zero_noise_scales_signal() {
        let s = sched();
        let x0 = t(&[0.5, -1.0, 0.25]);
        let xt = forward_sample(&x0, 300, &Tensor::zeros(&[3]), &s).unwrap();
        let k = s.alpha_bar(300).sqrt();
        for (a, b) in xt.data().iter().zip(x0.data()) {
            assert_eq!(*a, k * b);
        }
    }

    #[test]
    fn forward_rejects_shape_mismatch_and_bad_step() {
        let s = sched();
        let x0 = t(&[1.0, 2.0]);
        assert!(forward_sample(&x0, 1, &t(&[1.0]), &s).is_err());
        assert!(forward_sample(&x0, 0, &t(&[1.0, 1.0]), &s).is_err());
        assert!(forward_sample(&x0, 1001, &t(&[1.0, 1.0]), &s).is_err());
    }

    #[test]
    fn reverse_step_with_zero_prediction() {
        let s = sched();
        let xt = t(&[0.3, -0.7]);
        let out = reverse_step(&Zero, &xt, 17, &s, &Tensor::zeros(&[2])).unwrap();
        let k = 1.0 / s.alpha(17).sqrt();
        assert_relative_eq!(out.data()[0], 0.3 * k, max_relative = 1e-15);
        assert_relative_eq!(out.data()[1], -0.7 * k, max_relative = 1e-15);
    }

    #[test]
    fn reverse_step_inverts_single_step_with_oracle() {
        let s = make_schedule(ScheduleKind::Linear, 1, 0.5, 0.5).unwrap();
        let x0 = t(&[0.9, -0.2, 0.0]);
        let eps = t(&[1.3, 0.4, -2.0]);
        let x1 = forward_sample(&x0, 1, &eps, &s).unwrap();
        let oracle = Oracle { x0: &x0, sched: &s };
        let back = reverse_step(&oracle, &x1, 1, &s, &Tensor::zeros(&[3])).unwrap();
        for (a, b) in back.data().iter().zip(x0.data()) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn first_step_variance_is_beta_one() {
        let s = sched();
        assert_eq!(s.reverse_variance(1), s.beta(1));
    }

    #[test]
    fn diffusion_term_zero_for_oracle() {
        let s = sched();
        let x0 = t(&[0.2, 0.1]);
        let eps = t(&[0.5, -1.5]);
        let oracle = Oracle { x0: &x0, sched: &s };
        let v = diffusion_loss_term(&x0, 40, &oracle, &s, &eps).unwrap();
        assert!(v.abs() < 1e-20);
    }

    #[test]
    fn diffusion_term_rejects_first_step() {
        let s = sched();
        let x0 = t(&[0.0]);
        assert!(matches!(
            diffusion_loss_term(&x0, 1, &Zero, &s, &x0),
            Err(crate::error::Error::StepOutOfRange { .. })
        ));
    }

    #[test]
    fn diffusion_term_arithmetic() {
        // Constant predictor at distance sqrt(2) from eps; weight from the schedule.
        let s = sched();
        let x0 = t(&[0.0, 0.0]);
        let eps = t(&[1.0, 1.0]);
        let pred = Constant(t(&[0.0, 0.0]));
        let tt = 5;
        let got = diffusion_loss_term(&x0, tt, &pred, &s, &eps).unwrap();
        let ratio = s.snr(tt - 1) / s.snr(tt);
        assert_relative_eq!(got, 0.5 * (ratio - 1.0) * 2.0, max_relative = 1e-8);
    }

    #[test]
    fn prior_closed_forms() {
        let x0 = t(&[0.3, -1.0, 0.7]);
        assert_eq!(prior_kl(&x0, 0.0), 0.0);
        let zeros = Tensor::zeros(&[10]);
        let expected = 10.0 * 0.5 * (0.5 - 1.0 - 0.5f64.ln());
        assert_relative_eq!(prior_kl(&zeros, 0.5), expected, max_relative = 1e-14);
        assert_relative_eq!(expected / 10.0, 0.0966, epsilon = 1e-4);
    }

    #[test]
    fn prior_tiny_alpha_bar_bound() {
        let x0 = Tensor::filled(&[65536], 1.0);
        assert!(prior_kl(&x0, 1e-6) < 0.07);
    }

    #[test]
    fn reconstruction_at_perfect_mean() {
        let s = sched();
        let x0 = t(&[0.1, 0.2, -0.3, 0.4]);
        let mean = x0.clone();
        let v = gaussian_nll(&x0, &mean, s.beta(1)).unwrap();
        assert_relative_eq!(v, 4.0 * 0.5 * (2.0 * PI * s.beta(1)).ln(), max_relative = 1e-14);
        // with the oracle, μ_θ(x1, 1) is exactly x0 up to rounding
        let oracle = Oracle { x0: &x0, sched: &s };
        let r = reconstruction_loss(&x0, &oracle, &s, &t(&[0.3, -0.1, 1.2, 0.0])).unwrap();
        assert_relative_eq!(r, v, max_relative = 1e-6);
    }

    #[test]
    fn standard_normal_nll_at_one() {
        let v = gaussian_nll(&t(&[0.0]), &t(&[1.0]), 1.0).unwrap();
        assert_relative_eq!(v, 0.5 * (2.0 * PI).ln() + 0.5, max_relative = 1e-15);
        assert_relative_eq!(v, 1.4189, epsilon = 1e-4);
    }
}
