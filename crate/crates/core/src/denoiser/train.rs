use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DenoiserParams;
use crate::diffusion::{forward_sample, NoiseSchedule, ScheduleSpec, Tensor};
use crate::error::{Error, Result};
use crate::rng;

/// Gradient of the loss with respect to every parameter, in the same flat
/// layout as [`DenoiserParams::values`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    #[serde(flatten)]
    pub adam: AdamConfig,
    pub seed: u64,
    pub schedule: ScheduleSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            steps: 2000,
            adam: AdamConfig::default(),
            seed: 0,
            schedule: ScheduleSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam.eps >= 0.0) {
            return Err(Error::Config("adam eps must be non-negative".into()));
        }
        self.schedule.build().map(|_| ())
    }
}

// (t, ε) for batch element `i`; shared by the loss and its gradient.
fn draw(seed: u64, i: usize, shape: &[usize], steps: usize) -> (usize, Tensor) {
    let mut r = rng::stream(seed, &[i as u64]);
    let t = r.random_range(1..=steps);
    (t, Tensor::standard_normal(shape, &mut r))
}

fn check_batch(params: &DenoiserParams, batch: &[Tensor]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    for x in batch {
        params.check_input(x)?;
    }
    Ok(())
}

/// Mean over the batch of `‖ε − ε̂_θ(x_t, t)‖²` with `t` uniform on `1..=T`.
pub fn simple_loss(
    params: &DenoiserParams,
    batch: &[Tensor],
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<f64> {
    check_batch(params, batch)?;
    let per: Vec<f64> = batch
        .par_iter()
        .enumerate()
        .map(|(i, x0)| {
            let (t, eps) = draw(seed, i, x0.shape(), sched.steps());
            let xt = forward_sample(x0, t, &eps, sched)?;
            let (out, _) = params.forward(xt.data(), t);
            Ok(eps.data().iter().zip(&out).map(|(e, o)| (e - o) * (e - o)).sum())
        })
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / batch.len() as f64)
}

/// [`simple_loss`] and its gradient, using the same noise draws.
///
/// Per-element gradients are computed in parallel and summed in index order,
/// so the result is bitwise reproducible.
pub fn loss_and_grad(
    params: &DenoiserParams,
    batch: &[Tensor],
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<(f64, Gradients)> {
    check_batch(params, batch)?;
    let n = batch.len() as f64;
    let per: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, x0)| {
            let (t, eps) = draw(seed, i, x0.shape(), sched.steps());
            let xt = forward_sample(x0, t, &eps, sched)?;
            let (out, cache) = params.forward(xt.data(), t);
            let mut loss = 0.0;
            let d_out: Vec<f64> = eps
                .data()
                .iter()
                .zip(&out)
                .map(|(e, o)| {
                    loss += (e - o) * (e - o);
                    2.0 * (o - e) / n
                })
                .collect();
            let mut g = vec![0.0; params.param_count()];
            params.backward(&cache, &d_out, &mut g);
            Ok((loss, g))
        })
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut grad = vec![0.0; params.param_count()];
    for (l, g) in &per {
        total += l;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    Ok((total / n, Gradients(grad)))
}

/// Gradient of [`simple_loss`] with respect to every parameter.
pub fn grad(params: &DenoiserParams, batch: &[Tensor], sched: &NoiseSchedule, seed: u64) -> Result<Gradients> {
    loss_and_grad(params, batch, sched, seed).map(|(_, g)| g)
}

/// Bias-corrected Adam update.
pub fn adam_step(
    params: &DenoiserParams,
    grads: &Gradients,
    opt: &OptState,
    cfg: &AdamConfig,
) -> Result<(DenoiserParams, OptState)> {
    let n = params.param_count();
    if grads.0.len() != n || opt.m.len() != n || opt.v.len() != n {
        return Err(Error::Shape {
            expected: vec![n],
            actual: vec![grads.0.len(), opt.m.len(), opt.v.len()],
        });
    }
    let step = opt.step + 1;
    let bc1 = 1.0 - cfg.beta1.powf(step as f64);
    let bc2 = 1.0 - cfg.beta2.powf(step as f64);
    let mut next = params.clone();
    let mut m = opt.m.clone();
    let mut v = opt.v.clone();
    for i in 0..n {
        let g = grads.0[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        if m_hat != 0.0 {
            next.values[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok((next, OptState { m, v, step }))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: DenoiserParams,
    /// Minibatch loss before each update, one entry per step.
    pub losses: Vec<f64>,
}

/// Runs `cfg.steps` Adam updates on shuffled minibatches of `dataset`.
pub fn train(init: DenoiserParams, dataset: &[Tensor], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    for x in dataset {
        init.check_input(x)?;
    }
    let sched = cfg.schedule.build()?;
    let mut params = init;
    let mut opt = OptState::new(params.param_count());
    let mut losses = Vec::with_capacity(cfg.steps);

    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for step in 0..cfg.steps {
        batch.clear();
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order = (0..dataset.len()).collect();
                order.shuffle(&mut rng::stream(cfg.seed, &[rng::name_tag("epoch"), epoch]));
                epoch += 1;
                cursor = 0;
            }
            batch.push(dataset[order[cursor]].clone());
            cursor += 1;
        }
        let step_seed = rng::derive_seed(cfg.seed, &[rng::name_tag("step"), step as u64]);
        let (loss, grads) = loss_and_grad(&params, &batch, &sched, step_seed)?;
        if !loss.is_finite() || grads.0.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, loss });
        }
        losses.push(loss);
        let (p, o) = adam_step(&params, &grads, &opt, &cfg.adam)?;
        params = p;
        opt = o;
    }
    Ok(TrainOutcome { params, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{init_params, Architecture};
    use crate::diffusion::{make_schedule, ScheduleKind};

    fn toy_batch(shape: &[usize], n: usize, seed: u64) -> Vec<Tensor> {
        (0..n)
            .map(|i| {
                let mut x = Tensor::standard_normal(shape, &mut rng::stream(seed, &[i as u64]));
                x.data_mut().iter_mut().for_each(|v| *v = v.tanh());
                x
            })
            .collect()
    }

    #[test]
    fn zero_init_loss_is_chi_square_mean() {
        let arch = Architecture::mlp(&[4, 4], &[16], 8);
        let p = init_params(&arch, 1, true).unwrap();
        let sched = ScheduleSpec::default().build().unwrap();
        let batch = toy_batch(&[4, 4], 512, 2);
        let loss = simple_loss(&p, &batch, &sched, 3).unwrap();
        let d: f64 = 16.0;
        // E = d, Var of the batch mean = 2d / batch
        let tol = 5.0 * (2.0 * d / 512.0).sqrt();
        assert!((loss - d).abs() < tol, "loss {loss}");
    }

    #[test]
    fn loss_matches_loss_and_grad() {
        let arch = Architecture::small_conv(3, 4, 2, 4);
        let p = init_params(&arch, 1, false).unwrap();
        let sched = make_schedule(ScheduleKind::Linear, 20, 1e-3, 0.2).unwrap();
        let batch = toy_batch(&[3, 4], 5, 2);
        let a = simple_loss(&p, &batch, &sched, 7).unwrap();
        let (b, _) = loss_and_grad(&p, &batch, &sched, 7).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs());
        assert!(a >= 0.0);
    }

    #[test]
    fn empty_batch_rejected() {
        let p = init_params(&Architecture::mlp(&[2], &[3], 2), 0, true).unwrap();
        let sched = make_schedule(ScheduleKind::Linear, 5, 0.01, 0.1).unwrap();
        assert!(simple_loss(&p, &[], &sched, 0).is_err());
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let p = init_params(&Architecture::mlp(&[3], &[4], 2), 0, false).unwrap();
        let opt = OptState::new(p.param_count());
        let (q, o) = adam_step(&p, &Gradients(vec![0.0; p.param_count()]), &opt, &AdamConfig::default()).unwrap();
        assert_eq!(q.values(), p.values());
        assert_eq!(o.step, 1);
    }

    #[test]
    fn adam_first_step_without_momentum() {
        let p = init_params(&Architecture::mlp(&[3], &[4], 2), 0, false).unwrap();
        let n = p.param_count();
        let g: Vec<f64> = (0..n).map(|i| (i as f64 - 10.0) * 0.3).collect();
        let cfg = AdamConfig {
            learning_rate: 0.01,
            beta1: 0.0,
            beta2: 0.0,
            eps: 1e-8,
        };
        let (q, _) = adam_step(&p, &Gradients(g.clone()), &OptState::new(n), &cfg).unwrap();
        for ((before, after), gi) in p.values().iter().zip(q.values()).zip(&g) {
            let expected = before - 0.01 * gi / (gi.abs() + 1e-8);
            assert!((after - expected).abs() < 1e-15);
        }
        let (q2, _) = adam_step(&p, &Gradients(g), &OptState::new(n), &cfg).unwrap();
        assert_eq!(q, q2);
    }

    #[test]
    fn zero_steps_returns_init() {
        let p = init_params(&Architecture::mlp(&[2, 2], &[8], 4), 0, true).unwrap();
        let cfg = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        let out = train(p.clone(), &toy_batch(&[2, 2], 4, 0), &cfg).unwrap();
        assert_eq!(out.params.values(), p.values());
        assert!(out.losses.is_empty());
    }

    #[test]
    fn divergence_reports_step() {
        let p = init_params(&Architecture::mlp(&[2], &[4], 2), 0, false).unwrap();
        let mut data = toy_batch(&[2], 4, 0);
        data[0] = Tensor::from_parts(vec![2], vec![1e300, 1e300]);
        let cfg = TrainConfig {
            steps: 5,
            batch_size: 4,
            ..TrainConfig::default()
        };
        match train(p, &data, &cfg) {
            Err(Error::Diverged { step, .. }) => assert_eq!(step, 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn training_is_reproducible() {
        let arch = Architecture::mlp(&[2, 2], &[8], 4);
        let data = toy_batch(&[2, 2], 10, 5);
        let cfg = TrainConfig {
            steps: 30,
            batch_size: 4,
            schedule: ScheduleSpec {
                steps: 50,
                ..ScheduleSpec::default()
            },
            ..TrainConfig::default()
        };
        let a = train(init_params(&arch, 0, true).unwrap(), &data, &cfg).unwrap();
        let b = train(init_params(&arch, 0, true).unwrap(), &data, &cfg).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.params.values(), b.params.values());
    }
}
