//! Trainable ε-prediction networks.
//!
//! Two reference architectures are provided: an MLP over the flattened block
//! with the step embedding concatenated to the input, and a three-layer 3×3
//! convolutional net with the step embedding projected per channel and
//! broadcast-added to both hidden layers. All weights live in one flat `f64`
//! vector so the optimizer and gradient checks treat them uniformly.

mod checkpoint;
mod layers;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader};
pub use train::{
    adam_step, grad, loss_and_grad, simple_loss, train, AdamConfig, Gradients, OptState, TrainConfig,
    TrainOutcome,
};

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{NoisePredictor, Tensor};
use crate::error::{Error, Result};
use crate::rng;
use layers::{dense_backward, dense_forward, silu, silu_grad, time_embedding, Conv3};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// `layers` lists widths from input to output; the first and last must
    /// equal the flattened input size. The first layer additionally receives
    /// the `time_embed_dim`-wide step embedding.
    Mlp {
        input_shape: Vec<usize>,
        layers: Vec<usize>,
        time_embed_dim: usize,
    },
    SmallConv {
        height: usize,
        width: usize,
        channels: usize,
        time_embed_dim: usize,
    },
}

impl Architecture {
    pub fn mlp(input_shape: &[usize], hidden: &[usize], time_embed_dim: usize) -> Self {
        let d: usize = input_shape.iter().product();
        let mut layers = vec![d];
        layers.extend_from_slice(hidden);
        layers.push(d);
        Architecture::Mlp {
            input_shape: input_shape.to_vec(),
            layers,
            time_embed_dim,
        }
    }

    pub fn small_conv(height: usize, width: usize, channels: usize, time_embed_dim: usize) -> Self {
        Architecture::SmallConv {
            height,
            width,
            channels,
            time_embed_dim,
        }
    }

    pub fn input_shape(&self) -> Vec<usize> {
        match self {
            Architecture::Mlp { input_shape, .. } => input_shape.clone(),
            Architecture::SmallConv { height, width, .. } => vec![*height, *width],
        }
    }

    pub fn time_embed_dim(&self) -> usize {
        match self {
            Architecture::Mlp { time_embed_dim, .. } | Architecture::SmallConv { time_embed_dim, .. } => {
                *time_embed_dim
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.time_embed_dim();
        if e == 0 || !e.is_multiple_of(2) {
            return Err(Error::Config(format!("time_embed_dim must be even and positive, got {e}")));
        }
        match self {
            Architecture::Mlp {
                input_shape,
                layers,
                ..
            } => {
                let d: usize = input_shape.iter().product();
                if d == 0 {
                    return Err(Error::Config("mlp input shape is empty".into()));
                }
                if layers.len() < 2 {
                    return Err(Error::Config("mlp needs at least input and output widths".into()));
                }
                if layers[0] != d || *layers.last().unwrap() != d {
                    return Err(Error::Config(format!(
                        "mlp layers {layers:?} must start and end at the input size {d}"
                    )));
                }
                if layers.contains(&0) {
                    return Err(Error::Config("mlp layer width 0".into()));
                }
            }
            Architecture::SmallConv {
                height,
                width,
                channels,
                ..
            } => {
                if *height == 0 || *width == 0 || *channels == 0 {
                    return Err(Error::Config("small_conv dimensions must be positive".into()));
                }
            }
        }
        Ok(())
    }

    fn segments(&self) -> Vec<Segment> {
        let mut segs = Vec::new();
        let mut push = |len: usize, fan_in: usize| {
            let start = segs.last().map_or(0, |s: &Segment| s.range.end);
            segs.push(Segment {
                range: start..start + len,
                fan_in,
            });
        };
        match self {
            Architecture::Mlp {
                layers,
                time_embed_dim,
                ..
            } => {
                for (i, pair) in layers.windows(2).enumerate() {
                    let n_in = pair[0] + if i == 0 { *time_embed_dim } else { 0 };
                    push(pair[1] * n_in, n_in);
                    push(pair[1], 0);
                }
            }
            Architecture::SmallConv {
                channels: c,
                time_embed_dim: e,
                ..
            } => {
                let (c, e) = (*c, *e);
                push(c * 9, 9); // conv1 weight
                push(c, 0); // conv1 bias
                push(c * e, e); // step projection into layer 1
                push(c * c * 9, c * 9); // conv2 weight
                push(c, 0);
                push(c * e, e);
                push(c * 9, c * 9); // output conv weight
                push(1, 0);
            }
        }
        segs
    }

    pub fn param_count(&self) -> usize {
        self.segments().last().map_or(0, |s| s.range.end)
    }
}

#[derive(Debug, Clone)]
struct Segment {
    range: Range<usize>,
    // zero marks a bias
    fan_in: usize,
}

/// Weights of a denoiser together with the architecture that interprets them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserParams {
    arch: Architecture,
    #[serde(skip)]
    values: Vec<f64>,
}

/// Fan-in scaled uniform initialization, biases zero. With
/// `zero_output = true` the output layer starts at zero so `ε̂ ≡ 0`.
pub fn init_params(arch: &Architecture, seed: u64, zero_output: bool) -> Result<DenoiserParams> {
    arch.validate()?;
    let segs = arch.segments();
    let mut values = vec![0.0; arch.param_count()];
    let n_out_segs = 2;
    let mut r = rng::stream(seed, &[rng::name_tag("init")]);
    for (i, seg) in segs.iter().enumerate() {
        let is_output = i + n_out_segs >= segs.len();
        if seg.fan_in == 0 || (zero_output && is_output) {
            continue;
        }
        let bound = 1.0 / (seg.fan_in as f64).sqrt();
        for v in &mut values[seg.range.clone()] {
            *v = r.random_range(-bound..bound);
        }
    }
    Ok(DenoiserParams {
        arch: arch.clone(),
        values,
    })
}

/// Intermediate activations kept for the backward pass.
pub(crate) enum Cache {
    Mlp {
        // inputs to each dense layer, and pre-activations of hidden layers
        inputs: Vec<Vec<f64>>,
        pre: Vec<Vec<f64>>,
    },
    Conv {
        x: Vec<f64>,
        emb: Vec<f64>,
        a1: Vec<f64>,
        h1: Vec<f64>,
        a2: Vec<f64>,
        h2: Vec<f64>,
    },
}

impl DenoiserParams {
    pub fn from_values(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if values.len() != arch.param_count() {
            return Err(Error::Config(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite parameter".into()));
        }
        Ok(Self { arch, values })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    fn check_input(&self, xt: &Tensor) -> Result<()> {
        let expected = self.arch.input_shape();
        if xt.shape() != expected.as_slice() {
            return Err(Error::Shape {
                expected,
                actual: xt.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub(crate) fn forward(&self, x: &[f64], t: usize) -> (Vec<f64>, Cache) {
        let segs = self.arch.segments();
        let p = &self.values;
        match &self.arch {
            Architecture::Mlp {
                layers,
                time_embed_dim,
                ..
            } => {
                let mut z = x.to_vec();
                z.extend(time_embedding(t, *time_embed_dim));
                let n_layers = layers.len() - 1;
                let mut inputs = Vec::with_capacity(n_layers);
                let mut pre = Vec::with_capacity(n_layers - 1);
                for l in 0..n_layers {
                    let w = &p[segs[2 * l].range.clone()];
                    let b = &p[segs[2 * l + 1].range.clone()];
                    let mut a = vec![0.0; layers[l + 1]];
                    dense_forward(w, b, &z, &mut a);
                    inputs.push(std::mem::take(&mut z));
                    if l + 1 < n_layers {
                        z = a.iter().map(|&v| silu(v)).collect();
                        pre.push(a);
                    } else {
                        z = a;
                    }
                }
                (z, Cache::Mlp { inputs, pre })
            }
            Architecture::SmallConv {
                height,
                width,
                channels,
                time_embed_dim,
            } => {
                let (h, w, c) = (*height, *width, *channels);
                let plane = h * w;
                let emb = time_embedding(t, *time_embed_dim);
                let conv1 = Conv3 { c_in: 1, c_out: c, height: h, width: w };
                let conv2 = Conv3 { c_in: c, c_out: c, height: h, width: w };
                let conv3 = Conv3 { c_in: c, c_out: 1, height: h, width: w };

                let mut bias1 = vec![0.0; c];
                dense_forward(&p[segs[2].range.clone()], &p[segs[1].range.clone()], &emb, &mut bias1);
                let mut a1 = vec![0.0; c * plane];
                conv1.forward(&p[segs[0].range.clone()], &bias1, x, &mut a1);
                let h1: Vec<f64> = a1.iter().map(|&v| silu(v)).collect();

                let mut bias2 = vec![0.0; c];
                dense_forward(&p[segs[5].range.clone()], &p[segs[4].range.clone()], &emb, &mut bias2);
                let mut a2 = vec![0.0; c * plane];
                conv2.forward(&p[segs[3].range.clone()], &bias2, &h1, &mut a2);
                let h2: Vec<f64> = a2.iter().map(|&v| silu(v)).collect();

                let mut out = vec![0.0; plane];
                conv3.forward(&p[segs[6].range.clone()], &p[segs[7].range.clone()], &h2, &mut out);
                (
                    out,
                    Cache::Conv {
                        x: x.to_vec(),
                        emb,
                        a1,
                        h1,
                        a2,
                        h2,
                    },
                )
            }
        }
    }

    /// Accumulates `dL/dθ` into `grad` given `dL/d(output)`.
    pub(crate) fn backward(&self, cache: &Cache, d_out: &[f64], grad: &mut [f64]) {
        let segs = self.arch.segments();
        let p = &self.values;
        match (&self.arch, cache) {
            (Architecture::Mlp { layers, .. }, Cache::Mlp { inputs, pre }) => {
                let n_layers = layers.len() - 1;
                let mut delta = d_out.to_vec();
                for l in (0..n_layers).rev() {
                    let (wr, br) = (segs[2 * l].range.clone(), segs[2 * l + 1].range.clone());
                    let (gw, gb) = split_two(grad, wr.clone(), br);
                    let dz = dense_backward(&p[wr], &inputs[l], &delta, gw, gb);
                    if l == 0 {
                        break;
                    }
                    delta = dz
                        .iter()
                        .zip(&pre[l - 1])
                        .map(|(g, &a)| g * silu_grad(a))
                        .collect();
                }
            }
            (
                Architecture::SmallConv {
                    height,
                    width,
                    channels,
                    ..
                },
                Cache::Conv {
                    x,
                    emb,
                    a1,
                    h1,
                    a2,
                    h2,
                },
            ) => {
                let (h, w, c) = (*height, *width, *channels);
                let plane = h * w;
                let conv1 = Conv3 { c_in: 1, c_out: c, height: h, width: w };
                let conv2 = Conv3 { c_in: c, c_out: c, height: h, width: w };
                let conv3 = Conv3 { c_in: c, c_out: 1, height: h, width: w };

                let (gw3, gb3) = split_two(grad, segs[6].range.clone(), segs[7].range.clone());
                let dh2 = conv3
                    .backward(&p[segs[6].range.clone()], h2, d_out, gw3, gb3, true)
                    .unwrap();
                let da2: Vec<f64> = dh2.iter().zip(a2).map(|(g, &a)| g * silu_grad(a)).collect();

                let dbias2: Vec<f64> = da2.chunks(plane).map(|ch| ch.iter().sum()).collect();
                let (gwt2, gb2) = split_two(grad, segs[5].range.clone(), segs[4].range.clone());
                dense_backward(&p[segs[5].range.clone()], emb, &dbias2, gwt2, gb2);
                // bias2 gradient was added by dense_backward; conv2's own bias
                // slot is that same segment, so pass a scratch buffer here
                let mut scratch = vec![0.0; c];
                let dh1 = conv2
                    .backward(&p[segs[3].range.clone()], h1, &da2, &mut grad[segs[3].range.clone()], &mut scratch, true)
                    .unwrap();
                let da1: Vec<f64> = dh1.iter().zip(a1).map(|(g, &a)| g * silu_grad(a)).collect();

                let dbias1: Vec<f64> = da1.chunks(plane).map(|ch| ch.iter().sum()).collect();
                let (gwt1, gb1) = split_two(grad, segs[2].range.clone(), segs[1].range.clone());
                dense_backward(&p[segs[2].range.clone()], emb, &dbias1, gwt1, gb1);
                scratch.fill(0.0);
                conv1.backward(&p[segs[0].range.clone()], x, &da1, &mut grad[segs[0].range.clone()], &mut scratch, false);
            }
            _ => unreachable!("cache does not match architecture"),
        }
    }
}

/// Two disjoint mutable sub-slices of `buf`.
fn split_two(buf: &mut [f64], a: Range<usize>, b: Range<usize>) -> (&mut [f64], &mut [f64]) {
    if a.start < b.start {
        assert!(a.end <= b.start);
        let (lo, hi) = buf.split_at_mut(b.start);
        (&mut lo[a], &mut hi[..b.end - b.start])
    } else {
        assert!(b.end <= a.start);
        let (lo, hi) = buf.split_at_mut(a.start);
        (&mut hi[..a.end - a.start], &mut lo[b])
    }
}

impl NoisePredictor for DenoiserParams {
    fn predict_noise(&self, xt: &Tensor, t: usize) -> Result<Tensor> {
        self.check_input(xt)?;
        let (out, _) = self.forward(xt.data(), t);
        Ok(Tensor::from_parts(xt.shape().to_vec(), out))
    }
}

/// Convenience wrapper matching [`NoisePredictor::predict_noise`].
pub fn predict_noise(params: &DenoiserParams, xt: &Tensor, t: usize) -> Result<Tensor> {
    params.predict_noise(xt, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn archs() -> Vec<Architecture> {
        vec![
            Architecture::mlp(&[4, 4], &[32], 8),
            Architecture::mlp(&[2, 3], &[5, 7], 4),
            Architecture::small_conv(4, 5, 3, 4),
        ]
    }

    #[test]
    fn mlp_param_count_by_shape_arithmetic() {
        let arch = Architecture::mlp(&[4, 4], &[32], 8);
        // (16 + 8)·32 + 32 for the hidden layer, 32·16 + 16 for the output
        assert_eq!(arch.param_count(), 24 * 32 + 32 + 32 * 16 + 16);
        assert_eq!(arch.param_count(), 1328);
    }

    #[test]
    fn conv_param_count() {
        let arch = Architecture::small_conv(16, 16, 8, 6);
        let c = 8;
        let e = 6;
        assert_eq!(arch.param_count(), c * 9 + c + c * e + c * c * 9 + c + c * e + c * 9 + 1);
    }

    #[test]
    fn zero_output_predicts_zero() {
        for arch in archs() {
            let p = init_params(&arch, 3, true).unwrap();
            for t in [1, 7, 400] {
                let x = Tensor::standard_normal(&arch.input_shape(), &mut stream(1, &[t as u64]));
                let y = p.predict_noise(&x, t).unwrap();
                assert!(y.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn init_is_deterministic() {
        for arch in archs() {
            assert_eq!(init_params(&arch, 9, false).unwrap(), init_params(&arch, 9, false).unwrap());
            assert_eq!(
                init_params(&arch, 9, false).unwrap().values(),
                init_params(&arch, 9, false).unwrap().values()
            );
            assert_ne!(
                init_params(&arch, 9, false).unwrap().values(),
                init_params(&arch, 10, false).unwrap().values()
            );
        }
    }

    #[test]
    fn output_shape_matches_input() {
        for arch in archs() {
            let p = init_params(&arch, 5, false).unwrap();
            for t in 1..20 {
                let x = Tensor::standard_normal(&arch.input_shape(), &mut stream(2, &[t as u64]));
                let y = p.predict_noise(&x, t).unwrap();
                assert_eq!(y.shape(), x.shape());
                assert!(y.data().iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn wrong_shape_rejected() {
        let p = init_params(&Architecture::mlp(&[4, 4], &[8], 4), 0, true).unwrap();
        let x = Tensor::zeros(&[16]);
        assert!(matches!(p.predict_noise(&x, 1), Err(Error::Shape { .. })));
    }

    #[test]
    fn inconsistent_config_rejected() {
        let bad = Architecture::Mlp {
            input_shape: vec![4, 4],
            layers: vec![16, 8, 15],
            time_embed_dim: 4,
        };
        assert!(matches!(init_params(&bad, 0, true), Err(Error::Config(_))));
        assert!(init_params(&Architecture::mlp(&[4], &[], 3), 0, true).is_err());
        assert!(init_params(&Architecture::small_conv(0, 4, 2, 4), 0, true).is_err());
    }

    #[test]
    fn output_is_lipschitz_in_a_weight() {
        for arch in archs() {
            let base = init_params(&arch, 11, false).unwrap();
            let x = Tensor::standard_normal(&arch.input_shape(), &mut stream(4, &[0]));
            let y0 = base.predict_noise(&x, 3).unwrap();
            let delta_out = |k: usize, d: f64| {
                let mut p = base.clone();
                p.values_mut()[k] += d;
                p.predict_noise(&x, 3).unwrap().squared_distance(&y0).unwrap().sqrt()
            };
            for k in [0, base.param_count() / 2, base.param_count() - 1] {
                // local constant measured at δ = 1e-3, then checked at smaller steps
                let lip = delta_out(k, 1e-3) / 1e-3;
                for d in [1e-4, 1e-5, 1e-6] {
                    assert!(delta_out(k, d) <= 1.01 * lip * d + 1e-12, "param {k}, δ {d}");
                }
            }
        }
    }
}
