//! Forward and backward kernels shared by the reference architectures.

#[inline]
fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

#[inline]
pub fn silu(a: f64) -> f64 {
    a * sigmoid(a)
}

#[inline]
pub fn silu_grad(a: f64) -> f64 {
    let s = sigmoid(a);
    s * (1.0 + a * (1.0 - s))
}

/// Sinusoidal embedding of step `t`: `dim/2` sines then `dim/2` cosines with
/// geometrically spaced frequencies from 1 down to 1/10000.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[k] = arg.sin();
        out[half + k] = arg.cos();
    }
    out
}

/// `out = W·z + b` with `W` stored row-major as `[n_out][n_in]`.
pub fn dense_forward(w: &[f64], b: &[f64], z: &[f64], out: &mut [f64]) {
    let n_in = z.len();
    for (o, slot) in out.iter_mut().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        *slot = b[o] + row.iter().zip(z).map(|(a, c)| a * c).sum::<f64>();
    }
}

/// Accumulates weight and bias gradients and returns `dL/dz`.
pub fn dense_backward(
    w: &[f64],
    z: &[f64],
    d_out: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let n_in = z.len();
    let mut dz = vec![0.0; n_in];
    for (o, &g) in d_out.iter().enumerate() {
        db[o] += g;
        if g == 0.0 {
            continue;
        }
        let row = &w[o * n_in..(o + 1) * n_in];
        let drow = &mut dw[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            drow[i] += g * z[i];
            dz[i] += g * row[i];
        }
    }
    dz
}

/// Geometry of a 3×3 same-padded convolution over `[channels, height, width]`.
#[derive(Debug, Clone, Copy)]
pub struct Conv3 {
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
}

impl Conv3 {
    fn plane(&self) -> usize {
        self.height * self.width
    }

    // Output rows/cols for which input offset (k - 1) stays in bounds.
    fn span(k: usize, n: usize) -> (usize, usize) {
        let lo = if k == 0 { 1 } else { 0 };
        let hi = if k == 2 { n - 1 } else { n };
        (lo, hi)
    }

    /// `out[co] = bias[co] + Σ_ci w[co, ci] ⋆ input[ci]`.
    pub fn forward(&self, w: &[f64], bias: &[f64], input: &[f64], out: &mut [f64]) {
        let (h, wd, plane) = (self.height, self.width, self.plane());
        for co in 0..self.c_out {
            let o = &mut out[co * plane..(co + 1) * plane];
            o.fill(bias[co]);
            for ci in 0..self.c_in {
                let inp = &input[ci * plane..(ci + 1) * plane];
                for ky in 0..3 {
                    let (y0, y1) = Self::span(ky, h);
                    for kx in 0..3 {
                        let k = w[((co * self.c_in + ci) * 3 + ky) * 3 + kx];
                        if k == 0.0 {
                            continue;
                        }
                        let (x0, x1) = Self::span(kx, wd);
                        for y in y0..y1 {
                            let src = (y + ky - 1) * wd;
                            let dst = y * wd;
                            for x in x0..x1 {
                                o[dst + x] += k * inp[src + x + kx - 1];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulates weight/bias gradients; returns `dL/dinput` when requested.
    pub fn backward(
        &self,
        w: &[f64],
        input: &[f64],
        d_out: &[f64],
        dw: &mut [f64],
        db: &mut [f64],
        need_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let (h, wd, plane) = (self.height, self.width, self.plane());
        let mut d_in = need_input_grad.then(|| vec![0.0; self.c_in * plane]);
        for co in 0..self.c_out {
            let g = &d_out[co * plane..(co + 1) * plane];
            db[co] += g.iter().sum::<f64>();
            for ci in 0..self.c_in {
                let inp = &input[ci * plane..(ci + 1) * plane];
                for ky in 0..3 {
                    let (y0, y1) = Self::span(ky, h);
                    for kx in 0..3 {
                        let idx = ((co * self.c_in + ci) * 3 + ky) * 3 + kx;
                        let (x0, x1) = Self::span(kx, wd);
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let src = (y + ky - 1) * wd;
                            let dst = y * wd;
                            for x in x0..x1 {
                                acc += g[dst + x] * inp[src + x + kx - 1];
                            }
                        }
                        dw[idx] += acc;
                        if let Some(d_in) = d_in.as_mut() {
                            let k = w[idx];
                            if k == 0.0 {
                                continue;
                            }
                            let di = &mut d_in[ci * plane..(ci + 1) * plane];
                            for y in y0..y1 {
                                let src = (y + ky - 1) * wd;
                                let dst = y * wd;
                                for x in x0..x1 {
                                    di[src + x + kx - 1] += k * g[dst + x];
                                }
                            }
                        }
                    }
                }
            }
        }
        d_in
    }
}
