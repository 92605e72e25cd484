use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    diffusion_loss_term, prior_loss, reconstruction_loss, reverse_step, NoisePredictor,
    NoiseSchedule, Tensor,
};
use crate::error::{Error, Result};
use crate::rng;

// Stream tag reserved for the step index drawn in Monte-Carlo mode; step
// tags are 1..=T so this never collides.
const STEP_DRAW_TAG: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElboMode {
    /// Every step term is evaluated; `mc_samples` independent noise draws
    /// of the full sum are averaged.
    ExactSum,
    /// The step sum is estimated as `(T−1)·L_t` for one uniformly drawn
    /// `t ∈ 2..=T` per sample.
    Mc,
}

/// Terms of the bound on `−log p(x0)`, in nats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    pub recon_l0: f64,
    pub diffusion_lt: f64,
    pub prior_lt: f64,
    pub total: f64,
    pub mode: ElboMode,
    pub mc_samples: usize,
    /// Monte-Carlo standard error of `total`; zero when only one draw is taken.
    pub stderr: f64,
    pub seed: u64,
}

fn noise_for(shape: &[usize], seed: u64, draw: usize, step: usize) -> Tensor {
    Tensor::standard_normal(shape, &mut rng::stream(seed, &[draw as u64, step as u64]))
}

fn step_sum<P: NoisePredictor + Sync>(
    x0: &Tensor,
    model: &P,
    sched: &NoiseSchedule,
    seed: u64,
    draw: usize,
) -> Result<f64> {
    let terms = (2..=sched.steps())
        .into_par_iter()
        .map(|t| {
            let eps = noise_for(x0.shape(), seed, draw, t);
            diffusion_loss_term(x0, t, model, sched, &eps)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(terms.iter().sum())
}

fn sampled_step<P: NoisePredictor + Sync>(
    x0: &Tensor,
    model: &P,
    sched: &NoiseSchedule,
    seed: u64,
    draw: usize,
) -> Result<f64> {
    let steps = sched.steps();
    if steps < 2 {
        return Ok(0.0);
    }
    let t = rng::stream(seed, &[draw as u64, STEP_DRAW_TAG]).random_range(2..=steps);
    let eps = noise_for(x0.shape(), seed, draw, t);
    Ok((steps - 1) as f64 * diffusion_loss_term(x0, t, model, sched, &eps)?)
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Variational bound on `−log p_θ(x0)` split into reconstruction, step, and
/// prior terms. Deterministic given `seed`; the noise for draw `i` at step
/// `t` comes from its own stream, so results do not depend on scheduling.
pub fn elbo<P: NoisePredictor + Sync>(
    x0: &Tensor,
    model: &P,
    sched: &NoiseSchedule,
    mode: ElboMode,
    mc_samples: usize,
    seed: u64,
) -> Result<ElboBreakdown> {
    if mc_samples == 0 {
        return Err(Error::InvalidArgument("mc_samples must be at least 1".into()));
    }
    let draws = (0..mc_samples)
        .into_par_iter()
        .map(|i| {
            let eps = noise_for(x0.shape(), seed, i, 1);
            let recon = reconstruction_loss(x0, model, sched, &eps)?;
            let steps = match mode {
                ElboMode::ExactSum => step_sum(x0, model, sched, seed, i)?,
                ElboMode::Mc => sampled_step(x0, model, sched, seed, i)?,
            };
            Ok((recon, steps))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;

    let n = draws.len() as f64;
    let recon_l0 = draws.iter().map(|d| d.0).sum::<f64>() / n;
    let diffusion_lt = draws.iter().map(|d| d.1).sum::<f64>() / n;
    let prior_lt = prior_loss(x0, sched);
    let per_draw: Vec<f64> = draws.iter().map(|(r, s)| r + s).collect();
    let (_, stderr) = mean_and_stderr(&per_draw);
    Ok(ElboBreakdown {
        recon_l0,
        diffusion_lt,
        prior_lt,
        total: recon_l0 + diffusion_lt + prior_lt,
        mode,
        mc_samples,
        stderr,
        seed,
    })
}

/// Draws `x_T ~ N(0, I)` and runs the reverse chain down to `x_0`; the final
/// step is taken without noise.
pub fn ancestral_sample<P: NoisePredictor>(
    model: &P,
    sched: &NoiseSchedule,
    shape: &[usize],
    seed: u64,
) -> Result<Tensor> {
    let mut x = Tensor::standard_normal(shape, &mut rng::stream(seed, &[0]));
    for t in (1..=sched.steps()).rev() {
        let noise = if t > 1 {
            Tensor::standard_normal(shape, &mut rng::stream(seed, &[t as u64]))
        } else {
            Tensor::zeros(shape)
        };
        x = reverse_step(model, &x, t, sched, &noise)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{make_schedule, ScheduleKind};

    struct Zero;
    impl NoisePredictor for Zero {
        fn predict_noise(&self, xt: &Tensor, _t: usize) -> Result<Tensor> {
            Ok(Tensor::zeros(xt.shape()))
        }
    }

    /// ε̂ = a·x_t, a smooth but wrong predictor.
    struct Scaled(f64);
    impl NoisePredictor for Scaled {
        fn predict_noise(&self, xt: &Tensor, _t: usize) -> Result<Tensor> {
            xt.axpby(self.0, xt, 0.0)
        }
    }

    fn x0() -> Tensor {
        Tensor::new(vec![4], vec![0.5, -0.25, 0.8, -0.9]).unwrap()
    }

    #[test]
    fn zero_samples_rejected() {
        let s = make_schedule(ScheduleKind::Linear, 10, 0.01, 0.2).unwrap();
        assert!(matches!(
            elbo(&x0(), &Zero, &s, ElboMode::Mc, 0, 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn single_step_is_recon_plus_prior() {
        let s = make_schedule(ScheduleKind::Linear, 1, 0.3, 0.3).unwrap();
        let b = elbo(&x0(), &Scaled(0.4), &s, ElboMode::ExactSum, 1, 9).unwrap();
        let eps = noise_for(&[4], 9, 0, 1);
        let recon = reconstruction_loss(&x0(), &Scaled(0.4), &s, &eps).unwrap();
        assert_eq!(b.diffusion_lt, 0.0);
        assert_eq!(b.recon_l0, recon);
        assert_eq!(b.total, recon + prior_loss(&x0(), &s));
    }

    #[test]
    fn total_is_sum_of_terms_and_deterministic() {
        let s = make_schedule(ScheduleKind::Linear, 50, 1e-3, 0.2).unwrap();
        for mode in [ElboMode::ExactSum, ElboMode::Mc] {
            let a = elbo(&x0(), &Scaled(0.2), &s, mode, 16, 3).unwrap();
            let b = elbo(&x0(), &Scaled(0.2), &s, mode, 16, 3).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.total, a.recon_l0 + a.diffusion_lt + a.prior_lt);
            assert!(a.prior_lt >= 0.0 && a.diffusion_lt >= 0.0);
            assert!(a.stderr > 0.0);
        }
    }

    #[test]
    fn exact_and_mc_agree() {
        let s = make_schedule(ScheduleKind::Linear, 10, 0.01, 0.3).unwrap();
        let model = Scaled(0.3);
        let exact = elbo(&x0(), &model, &s, ElboMode::ExactSum, 4000, 11).unwrap();
        let mc = elbo(&x0(), &model, &s, ElboMode::Mc, 100_000, 12).unwrap();
        let se = (exact.stderr.powi(2) + mc.stderr.powi(2)).sqrt();
        assert!(
            (exact.total - mc.total).abs() < 4.0 * se,
            "exact {} mc {} se {}",
            exact.total,
            mc.total,
            se
        );
    }

    #[test]
    fn zero_predictor_weights_positive() {
        let s = make_schedule(ScheduleKind::Linear, 200, 1e-4, 0.05).unwrap();
        for t in 2..=200 {
            let eps = noise_for(&[4], 5, 0, t);
            let v = diffusion_loss_term(&x0(), t, &Zero, &s, &eps).unwrap();
            assert!(v > 0.0);
        }
    }

    #[test]
    fn ancestral_single_step_formula() {
        let s = make_schedule(ScheduleKind::Linear, 1, 0.4, 0.4).unwrap();
        let out = ancestral_sample(&Zero, &s, &[3], 21).unwrap();
        let xt = Tensor::standard_normal(&[3], &mut rng::stream(21, &[0]));
        for (o, x) in out.data().iter().zip(xt.data()) {
            assert_eq!(*o, x / s.alpha(1).sqrt());
        }
    }

    #[test]
    fn ancestral_is_deterministic() {
        let s = make_schedule(ScheduleKind::Linear, 30, 1e-3, 0.1).unwrap();
        let a = ancestral_sample(&Scaled(0.1), &s, &[2, 3], 4).unwrap();
        let b = ancestral_sample(&Scaled(0.1), &s, &[2, 3], 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[2, 3]);
    }
}
