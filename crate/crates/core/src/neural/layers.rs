use alloc::vec;
use alloc::vec::Vec;
use rand::Rng as _;
use rand::SeedableRng;

use super::linalg::{matmul_a_bt_acc, matmul_acc, matmul_at_b_acc};
use super::{Mode, NnError, Param, Result, Tensor};
use crate::math;
use crate::seed::Rng;

fn expect_rank(context: &str, x: &Tensor, rank: usize) -> Result<()> {
    if x.shape().len() != rank {
        return Err(NnError::ShapeMismatch {
            context: context.into(),
            expected: vec![0; rank],
            got: x.shape().to_vec(),
        });
    }
    Ok(())
}

/// He-style uniform init, bound `sqrt(6 / fan_in)`.
pub(crate) fn fan_in_uniform(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = math::sqrt(6.0 / fan_in as f64);
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).expect("shape matches generated data")
}

/// 2-D cross-correlation, stride 1, no padding.
///
/// Weight layout is `[C·kh·kw, F]` so the forward pass is a single
/// `patches · weight` product.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub weight: Param,
    pub bias: Param,
    cache: Option<ConvCache>,
}

#[derive(Debug, Clone)]
struct ConvCache {
    input_shape: Vec<usize>,
    cols: Vec<f64>,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        filters: usize,
        kernel_h: usize,
        kernel_w: usize,
        rng: &mut Rng,
    ) -> Self {
        let k = in_channels * kernel_h * kernel_w;
        Conv2d {
            in_channels,
            filters,
            kernel_h,
            kernel_w,
            weight: Param::new(fan_in_uniform(rng, &[k, filters], k)),
            bias: Param::new(Tensor::zeros(&[filters])),
            cache: None,
        }
    }

    /// Per-sample output shape for a per-sample `[C, H, W]` input.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 3 || input[0] != self.in_channels {
            return Err(NnError::ShapeMismatch {
                context: "conv2d input".into(),
                expected: vec![self.in_channels, 0, 0],
                got: input.to_vec(),
            });
        }
        if input[1] < self.kernel_h || input[2] < self.kernel_w {
            return Err(NnError::KernelTooLarge {
                layer: 0,
                kind: "conv2d",
                kernel: (self.kernel_h, self.kernel_w),
                input: input.to_vec(),
            });
        }
        Ok(vec![
            self.filters,
            input[1] - self.kernel_h + 1,
            input[2] - self.kernel_w + 1,
        ])
    }

    pub fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        expect_rank("conv2d forward", x, 4)?;
        let s = x.shape();
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let out_shape = self.output_shape(&s[1..])?;
        let (ho, wo) = (out_shape[1], out_shape[2]);
        let (kh, kw, f) = (self.kernel_h, self.kernel_w, self.filters);
        let k = c * kh * kw;
        let p = ho * wo;

        let xd = x.data();
        let mut cols = vec![0.0; b * p * k];
        for bi in 0..b {
            for oh in 0..ho {
                for ow in 0..wo {
                    let row = &mut cols[((bi * p) + oh * wo + ow) * k..][..k];
                    let mut idx = 0;
                    for ci in 0..c {
                        let base = ((bi * c + ci) * h + oh) * w + ow;
                        for i in 0..kh {
                            let src = &xd[base + i * w..base + i * w + kw];
                            row[idx..idx + kw].copy_from_slice(src);
                            idx += kw;
                        }
                    }
                }
            }
        }

        let bias = self.bias.value.data();
        let mut out_t = Vec::with_capacity(b * p * f);
        for _ in 0..b * p {
            out_t.extend_from_slice(bias);
        }
        matmul_acc(&cols, self.weight.value.data(), &mut out_t, b * p, k, f);

        let mut out = vec![0.0; b * f * p];
        for bi in 0..b {
            for pi in 0..p {
                let src = &out_t[(bi * p + pi) * f..][..f];
                for (fi, &v) in src.iter().enumerate() {
                    out[(bi * f + fi) * p + pi] = v;
                }
            }
        }
        self.cache = Some(ConvCache {
            input_shape: s.to_vec(),
            cols,
        });
        Tensor::from_vec(&[b, f, ho, wo], out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(NnError::NoForwardCache)?;
        let s = &cache.input_shape;
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (kh, kw, f) = (self.kernel_h, self.kernel_w, self.filters);
        let (ho, wo) = (h - kh + 1, w - kw + 1);
        let p = ho * wo;
        let k = c * kh * kw;
        if grad.shape() != [b, f, ho, wo] {
            return Err(NnError::ShapeMismatch {
                context: "conv2d backward".into(),
                expected: vec![b, f, ho, wo],
                got: grad.shape().to_vec(),
            });
        }
        let gd = grad.data();
        let mut g_t = vec![0.0; b * p * f];
        for bi in 0..b {
            for fi in 0..f {
                let src = &gd[(bi * f + fi) * p..][..p];
                for (pi, &v) in src.iter().enumerate() {
                    g_t[(bi * p + pi) * f + fi] = v;
                }
            }
        }
        {
            let db = self.bias.grad.data_mut();
            for row in g_t.chunks_exact(f) {
                for (d, &g) in db.iter_mut().zip(row) {
                    *d += g;
                }
            }
        }
        matmul_at_b_acc(&cache.cols, &g_t, self.weight.grad.data_mut(), b * p, k, f);

        let mut dcols = vec![0.0; b * p * k];
        matmul_a_bt_acc(&g_t, self.weight.value.data(), &mut dcols, b * p, f, k);

        let mut dx = vec![0.0; b * c * h * w];
        for bi in 0..b {
            for oh in 0..ho {
                for ow in 0..wo {
                    let row = &dcols[((bi * p) + oh * wo + ow) * k..][..k];
                    let mut idx = 0;
                    for ci in 0..c {
                        let base = ((bi * c + ci) * h + oh) * w + ow;
                        for i in 0..kh {
                            for j in 0..kw {
                                dx[base + i * w + j] += row[idx];
                                idx += 1;
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_vec(s, dx)
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        vec![("weight", &mut self.weight), ("bias", &mut self.bias)]
    }

    pub fn params(&self) -> Vec<(&'static str, &Param)> {
        vec![("weight", &self.weight), ("bias", &self.bias)]
    }
}

/// Batch normalization over axis 1 (channels), for `[B, C]` or `[B, C, ...]`.
///
/// Train mode normalizes with biased batch statistics and folds them into the
/// running estimates with `running = (1 − momentum)·running + momentum·batch`
/// (running variance uses the unbiased batch variance). Eval mode uses the
/// running estimates only.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub channels: usize,
    pub momentum: f64,
    pub epsilon: f64,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    shape: Vec<usize>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    mode: Mode,
}

impl BatchNorm {
    pub fn new(channels: usize, momentum: f64, epsilon: f64) -> Self {
        let mut gamma = Tensor::zeros(&[channels]);
        gamma.fill(1.0);
        let mut running_var = Tensor::zeros(&[channels]);
        running_var.fill(1.0);
        BatchNorm {
            channels,
            momentum,
            epsilon,
            gamma: Param::new(gamma),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var,
            cache: None,
        }
    }

    fn layout(&self, x: &Tensor) -> Result<(usize, usize)> {
        let s = x.shape();
        if s.len() < 2 || s[1] != self.channels {
            return Err(NnError::ShapeMismatch {
                context: "batch_norm input".into(),
                expected: vec![0, self.channels],
                got: s.to_vec(),
            });
        }
        let inner: usize = s[2..].iter().product();
        Ok((s[0], inner))
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (b, inner) = self.layout(x)?;
        let c = self.channels;
        let xd = x.data();
        let (mean, var) = match mode {
            Mode::Train => {
                if b < 2 {
                    return Err(NnError::BatchTooSmall(b));
                }
                let m = (b * inner) as f64;
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for bi in 0..b {
                    for (ci, mu) in mean.iter_mut().enumerate() {
                        *mu += xd[(bi * c + ci) * inner..][..inner].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|mu| *mu /= m);
                for bi in 0..b {
                    for ci in 0..c {
                        let mu = mean[ci];
                        var[ci] += xd[(bi * c + ci) * inner..][..inner]
                            .iter()
                            .map(|&v| (v - mu) * (v - mu))
                            .sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= m);
                let unbias = m / (m - 1.0);
                let mom = self.momentum;
                for ci in 0..c {
                    let rm = &mut self.running_mean.data_mut()[ci];
                    *rm = (1.0 - mom) * *rm + mom * mean[ci];
                    let rv = &mut self.running_var.data_mut()[ci];
                    *rv = (1.0 - mom) * *rv + mom * var[ci] * unbias;
                }
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.data().to_vec(),
                self.running_var.data().to_vec(),
            ),
        };
        let inv_std: Vec<f64> = var
            .iter()
            .map(|v| 1.0 / math::sqrt(v + self.epsilon))
            .collect();
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for bi in 0..b {
            for ci in 0..c {
                let off = (bi * c + ci) * inner;
                for j in off..off + inner {
                    let nh = (xd[j] - mean[ci]) * inv_std[ci];
                    xhat[j] = nh;
                    out[j] = gamma[ci] * nh + beta[ci];
                }
            }
        }
        self.cache = Some(BnCache {
            shape: x.shape().to_vec(),
            xhat,
            inv_std,
            mode,
        });
        Tensor::from_vec(x.shape(), out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(NnError::NoForwardCache)?;
        if grad.shape() != cache.shape.as_slice() {
            return Err(NnError::ShapeMismatch {
                context: "batch_norm backward".into(),
                expected: cache.shape.clone(),
                got: grad.shape().to_vec(),
            });
        }
        let b = cache.shape[0];
        let c = self.channels;
        let inner: usize = cache.shape[2..].iter().product();
        let gd = grad.data();
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for bi in 0..b {
            for ci in 0..c {
                let off = (bi * c + ci) * inner;
                for j in off..off + inner {
                    dgamma[ci] += gd[j] * cache.xhat[j];
                    dbeta[ci] += gd[j];
                }
            }
        }
        let gamma = self.gamma.value.data();
        let mut dx = vec![0.0; gd.len()];
        match cache.mode {
            Mode::Train => {
                let m = (b * inner) as f64;
                for bi in 0..b {
                    for ci in 0..c {
                        let off = (bi * c + ci) * inner;
                        let scale = gamma[ci] * cache.inv_std[ci];
                        let mean_g = dbeta[ci] / m;
                        let mean_gx = dgamma[ci] / m;
                        for j in off..off + inner {
                            dx[j] = scale * (gd[j] - mean_g - cache.xhat[j] * mean_gx);
                        }
                    }
                }
            }
            Mode::Eval => {
                for bi in 0..b {
                    for ci in 0..c {
                        let off = (bi * c + ci) * inner;
                        let scale = gamma[ci] * cache.inv_std[ci];
                        for j in off..off + inner {
                            dx[j] = scale * gd[j];
                        }
                    }
                }
            }
        }
        for (d, v) in self.gamma.grad.data_mut().iter_mut().zip(&dgamma) {
            *d += v;
        }
        for (d, v) in self.beta.grad.data_mut().iter_mut().zip(&dbeta) {
            *d += v;
        }
        Tensor::from_vec(&cache.shape, dx)
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        vec![("gamma", &mut self.gamma), ("beta", &mut self.beta)]
    }

    pub fn params(&self) -> Vec<(&'static str, &Param)> {
        vec![("gamma", &self.gamma), ("beta", &self.beta)]
    }
}

/// `[B, C, H, W]` → `[B, H, C·W]`.
#[derive(Debug, Clone, Default)]
pub struct ToSequence {
    input_shape: Option<Vec<usize>>,
}

impl ToSequence {
    pub fn output_shape(input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 3 {
            return Err(NnError::ShapeMismatch {
                context: "to_sequence input".into(),
                expected: vec![0, 0, 0],
                got: input.to_vec(),
            });
        }
        Ok(vec![input[1], input[0] * input[2]])
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        expect_rank("to_sequence forward", x, 4)?;
        let s = x.shape().to_vec();
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let xd = x.data();
        let mut out = vec![0.0; xd.len()];
        for bi in 0..b {
            for ci in 0..c {
                for hi in 0..h {
                    let src = &xd[((bi * c + ci) * h + hi) * w..][..w];
                    let dst = ((bi * h + hi) * c + ci) * w;
                    out[dst..dst + w].copy_from_slice(src);
                }
            }
        }
        self.input_shape = Some(s);
        Tensor::from_vec(&[b, h, c * w], out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let s = self.input_shape.as_ref().ok_or(NnError::NoForwardCache)?;
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let gd = grad.data();
        let mut dx = vec![0.0; gd.len()];
        for bi in 0..b {
            for ci in 0..c {
                for hi in 0..h {
                    let dst = ((bi * c + ci) * h + hi) * w;
                    let src = ((bi * h + hi) * c + ci) * w;
                    dx[dst..dst + w].copy_from_slice(&gd[src..src + w]);
                }
            }
        }
        Tensor::from_vec(s, dx)
    }
}

/// Fully connected layer applied to the last axis. Weight is `[in, out]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub inputs: usize,
    pub units: usize,
    pub weight: Param,
    pub bias: Param,
    cache: Option<Tensor>,
}

impl Dense {
    pub fn new(inputs: usize, units: usize, rng: &mut Rng) -> Self {
        Dense {
            inputs,
            units,
            weight: Param::new(fan_in_uniform(rng, &[inputs, units], inputs)),
            bias: Param::new(Tensor::zeros(&[units])),
            cache: None,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match input.last() {
            Some(&d) if d == self.inputs => {
                let mut out = input.to_vec();
                *out.last_mut().unwrap() = self.units;
                Ok(out)
            }
            _ => Err(NnError::ShapeMismatch {
                context: "dense input".into(),
                expected: vec![self.inputs],
                got: input.to_vec(),
            }),
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut shape = x.shape().to_vec();
        if shape.len() < 2 {
            return Err(NnError::ShapeMismatch {
                context: "dense forward".into(),
                expected: vec![0, self.inputs],
                got: shape,
            });
        }
        let out_shape = self.output_shape(&shape[1..])?;
        let rows = x.len() / self.inputs;
        let bias = self.bias.value.data();
        let mut out = Vec::with_capacity(rows * self.units);
        for _ in 0..rows {
            out.extend_from_slice(bias);
        }
        matmul_acc(
            x.data(),
            self.weight.value.data(),
            &mut out,
            rows,
            self.inputs,
            self.units,
        );
        shape.truncate(1);
        shape.extend_from_slice(&out_shape);
        self.cache = Some(x.clone());
        Tensor::from_vec(&shape, out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self.cache.as_ref().ok_or(NnError::NoForwardCache)?;
        let rows = x.len() / self.inputs;
        if grad.len() != rows * self.units {
            return Err(NnError::ShapeMismatch {
                context: "dense backward".into(),
                expected: vec![rows, self.units],
                got: grad.shape().to_vec(),
            });
        }
        let gd = grad.data();
        {
            let db = self.bias.grad.data_mut();
            for row in gd.chunks_exact(self.units) {
                for (d, &g) in db.iter_mut().zip(row) {
                    *d += g;
                }
            }
        }
        matmul_at_b_acc(
            x.data(),
            gd,
            self.weight.grad.data_mut(),
            rows,
            self.inputs,
            self.units,
        );
        let mut dx = vec![0.0; rows * self.inputs];
        matmul_a_bt_acc(
            gd,
            self.weight.value.data(),
            &mut dx,
            rows,
            self.units,
            self.inputs,
        );
        Tensor::from_vec(x.shape(), dx)
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        vec![("weight", &mut self.weight), ("bias", &mut self.bias)]
    }

    pub fn params(&self) -> Vec<(&'static str, &Param)> {
        vec![("weight", &self.weight), ("bias", &self.bias)]
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let mask: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
        let out = x
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { 0.0 })
            .collect();
        self.mask = Some(mask);
        Tensor::from_vec(x.shape(), out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mask = self.mask.as_ref().ok_or(NnError::NoForwardCache)?;
        let out = grad
            .data()
            .iter()
            .zip(mask)
            .map(|(&g, &m)| if m { g } else { 0.0 })
            .collect();
        Tensor::from_vec(grad.shape(), out)
    }
}

/// Inverted dropout: scaled by `1/(1−rate)` in train mode, identity in eval.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
    rng: Rng,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::InvalidSpec(alloc::format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        Ok(Dropout {
            rate,
            rng: Rng::seed_from_u64(seed),
            mask: None,
        })
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        if mode == Mode::Eval || self.rate == 0.0 {
            self.mask = None;
            return Ok(x.clone());
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mask: Vec<f64> = (0..x.len())
            .map(|_| {
                if self.rng.random::<f64>() < keep {
                    scale
                } else {
                    0.0
                }
            })
            .collect();
        let out = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.mask = Some(mask);
        Tensor::from_vec(x.shape(), out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        match &self.mask {
            None => Ok(grad.clone()),
            Some(mask) => {
                let out = grad.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                Tensor::from_vec(grad.shape(), out)
            }
        }
    }
}
