use rayon::prelude::*;

use super::{shape_err, Mode, NnError, Scalar, Tensor4};

/// Samples per work item in batch-parallel loops. Parameter gradients are
/// reduced chunk by chunk in index order, so results do not depend on the
/// number of worker threads.
pub const BATCH_CHUNK: usize = 8;

/// Mutable view of one parameter tensor and its accumulated gradient.
pub struct Param<'a, T> {
    pub name: String,
    pub value: &'a mut [T],
    pub grad: &'a mut [T],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d,
    BatchNorm,
    Relu,
    MaxPool,
    Dense,
    Softmax,
}

impl LayerKind {
    pub fn code(self) -> u8 {
        match self {
            LayerKind::Conv2d => 1,
            LayerKind::BatchNorm => 2,
            LayerKind::Relu => 3,
            LayerKind::MaxPool => 4,
            LayerKind::Dense => 5,
            LayerKind::Softmax => 6,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => LayerKind::Conv2d,
            2 => LayerKind::BatchNorm,
            3 => LayerKind::Relu,
            4 => LayerKind::MaxPool,
            5 => LayerKind::Dense,
            6 => LayerKind::Softmax,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool => "maxpool",
            LayerKind::Dense => "dense",
            LayerKind::Softmax => "softmax",
        }
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

fn expect_shape(context: &str, expected: [usize; 4], got: [usize; 4]) -> Result<(), NnError> {
    if expected == got {
        Ok(())
    } else {
        Err(shape_err(context, &expected, &got))
    }
}

// ---------------------------------------------------------------------------

/// Stride-1 cross-correlation with zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub padding: (usize, usize),
    /// `[out][in][kh][kw]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub grad_weight: Vec<T>,
    pub grad_bias: Vec<T>,
    input: Option<Tensor4<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: (usize, usize), padding: (usize, usize)) -> Self {
        let n = out_channels * in_channels * kernel.0 * kernel.1;
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            padding,
            weight: vec![T::zero(); n],
            bias: vec![T::zero(); out_channels],
            grad_weight: vec![T::zero(); n],
            grad_bias: vec![T::zero(); out_channels],
            input: None,
        }
    }

    /// Odd square kernel with "same" padding.
    pub fn same(in_channels: usize, out_channels: usize, k: usize) -> Self {
        Self::new(in_channels, out_channels, (k, k), (k / 2, k / 2))
    }

    pub fn output_shape(&self, [c, h, w]: [usize; 3]) -> Result<[usize; 3], NnError> {
        if c != self.in_channels {
            return Err(shape_err("conv2d input channels", &[self.in_channels], &[c]));
        }
        let (kh, kw) = self.kernel;
        let (ph, pw) = self.padding;
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(NnError::Config(format!(
                "conv2d kernel {kh}x{kw} does not fit a padded {h}x{w} input"
            )));
        }
        Ok([self.out_channels, h + 2 * ph - kh + 1, w + 2 * pw - kw + 1])
    }

    fn dims(&self, x: &Tensor4<T>) -> Result<(usize, usize, usize, usize), NnError> {
        let [_, c, h, w] = x.shape();
        let [_, ho, wo] = self.output_shape([c, h, w])?;
        Ok((h, w, ho, wo))
    }

    /// Output rows/cols touched by kernel offset `k` with padding `p`.
    #[inline]
    fn valid(k: usize, p: usize, n_in: usize, n_out: usize) -> (usize, usize) {
        let lo = p.saturating_sub(k);
        let hi = (n_in + p).saturating_sub(k).min(n_out);
        (lo, hi.max(lo))
    }

    fn forward_sample(&self, x: &[T], out: &mut [T], h: usize, w: usize, ho: usize, wo: usize) {
        let (kh, kw) = self.kernel;
        let (ph, pw) = self.padding;
        for oc in 0..self.out_channels {
            let o = &mut out[oc * ho * wo..(oc + 1) * ho * wo];
            o.fill(self.bias[oc]);
            for ic in 0..self.in_channels {
                let xin = &x[ic * h * w..(ic + 1) * h * w];
                for ky in 0..kh {
                    let (oy0, oy1) = Self::valid(ky, ph, h, ho);
                    for kx in 0..kw {
                        let (ox0, ox1) = Self::valid(kx, pw, w, wo);
                        let wv = self.weight[((oc * self.in_channels + ic) * kh + ky) * kw + kx];
                        for oy in oy0..oy1 {
                            let iy = oy + ky - ph;
                            let ix0 = ox0 + kx - pw;
                            axpy(
                                wv,
                                &xin[iy * w + ix0..iy * w + ix0 + (ox1 - ox0)],
                                &mut o[oy * wo + ox0..oy * wo + ox1],
                            );
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_sample(
        &self,
        x: &[T],
        g: &[T],
        gx: &mut [T],
        gw: &mut [T],
        gb: &mut [T],
        (h, w, ho, wo): (usize, usize, usize, usize),
    ) {
        let (kh, kw) = self.kernel;
        let (ph, pw) = self.padding;
        for oc in 0..self.out_channels {
            let go = &g[oc * ho * wo..(oc + 1) * ho * wo];
            gb[oc] += go.iter().copied().sum::<T>();
            for ic in 0..self.in_channels {
                let xin = &x[ic * h * w..(ic + 1) * h * w];
                let gxin = &mut gx[ic * h * w..(ic + 1) * h * w];
                for ky in 0..kh {
                    let (oy0, oy1) = Self::valid(ky, ph, h, ho);
                    for kx in 0..kw {
                        let (ox0, ox1) = Self::valid(kx, pw, w, wo);
                        let widx = ((oc * self.in_channels + ic) * kh + ky) * kw + kx;
                        let wv = self.weight[widx];
                        let mut acc = T::zero();
                        for oy in oy0..oy1 {
                            let iy = oy + ky - ph;
                            let ix0 = ox0 + kx - pw;
                            let grow = &go[oy * wo + ox0..oy * wo + ox1];
                            let span = iy * w + ix0..iy * w + ix0 + (ox1 - ox0);
                            acc += dot(grow, &xin[span.clone()]);
                            axpy(wv, grow, &mut gxin[span]);
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }

    pub fn forward_infer(&self, x: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
        let (h, w, ho, wo) = self.dims(x)?;
        let n = x.batch();
        let mut out = Tensor4::zeros([n, self.out_channels, ho, wo]);
        let (in_len, out_len) = (x.sample_len(), self.out_channels * ho * wo);
        out.data_mut()
            .par_chunks_mut(out_len)
            .zip(x.data().par_chunks(in_len))
            .for_each(|(o, xi)| self.forward_sample(xi, o, h, w, ho, wo));
        Ok(out)
    }

    pub fn forward_train(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
        let y = self.forward_infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, g: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
        let input = self.input.as_ref().ok_or(NnError::NoForward("conv2d"))?;
        let dims = self.dims(input)?;
        let (_, _, ho, wo) = dims;
        let n = input.batch();
        expect_shape("conv2d upstream gradient", [n, self.out_channels, ho, wo], g.shape())?;

        let (in_len, out_len) = (input.sample_len(), self.out_channels * ho * wo);
        let mut gx = Tensor4::zeros(input.shape());
        let this = &*self;
        let partials: Vec<(Vec<T>, Vec<T>)> = gx
            .data_mut()
            .par_chunks_mut(BATCH_CHUNK * in_len)
            .zip(input.data().par_chunks(BATCH_CHUNK * in_len))
            .zip(g.data().par_chunks(BATCH_CHUNK * out_len))
            .map(|((gxc, xc), gc)| {
                let mut gw = vec![T::zero(); this.weight.len()];
                let mut gb = vec![T::zero(); this.out_channels];
                for s in 0..xc.len() / in_len {
                    this.backward_sample(
                        &xc[s * in_len..(s + 1) * in_len],
                        &gc[s * out_len..(s + 1) * out_len],
                        &mut gxc[s * in_len..(s + 1) * in_len],
                        &mut gw,
                        &mut gb,
                        dims,
                    );
                }
                (gw, gb)
            })
            .collect();
        for (gw, gb) in partials {
            axpy(T::one(), &gw, &mut self.grad_weight);
            axpy(T::one(), &gb, &mut self.grad_bias);
        }
        Ok(gx)
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct BnCache<T> {
    x_hat: Vec<T>,
    inv_std: Vec<f64>,
    shape: [usize; 4],
}

/// Per-channel batch normalization over batch, height and width.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub channels: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub grad_gamma: Vec<T>,
    pub grad_beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: f64,
    /// Weight of the old running value in each update.
    pub momentum: f64,
    cache: Option<BnCache<T>>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.9;

    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            channels,
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            grad_gamma: vec![T::zero(); channels],
            grad_beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: Self::EPS,
            momentum: Self::MOMENTUM,
            cache: None,
        }
    }

    pub fn output_shape(&self, shape: [usize; 3]) -> Result<[usize; 3], NnError> {
        if shape[0] != self.channels {
            return Err(shape_err("batchnorm channels", &[self.channels], &[shape[0]]));
        }
        Ok(shape)
    }

    fn check(&self, x: &Tensor4<T>) -> Result<(usize, usize), NnError> {
        let [n, c, h, w] = x.shape();
        self.output_shape([c, h, w])?;
        Ok((n, h * w))
    }

    pub fn forward_infer(&self, x: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
        let (n, hw) = self.check(x)?;
        let mut y = x.clone();
        let c = self.channels;
        for ch in 0..c {
            let inv = 1.0 / (self.running_var[ch].as_f64() + self.eps).sqrt();
            let scale = T::of(self.gamma[ch].as_f64() * inv);
            let shift = T::of(self.beta[ch].as_f64() - self.running_mean[ch].as_f64() * self.gamma[ch].as_f64() * inv);
            for s in 0..n {
                for v in &mut y.data_mut()[(s * c + ch) * hw..(s * c + ch + 1) * hw] {
                    *v = *v * scale + shift;
                }
            }
        }
        Ok(y)
    }

    pub fn forward_train(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
        let (n, hw) = self.check(x)?;
        let c = self.channels;
        let m = (n * hw) as f64;
        let mut y = x.clone();
        let mut x_hat = vec![T::zero(); x.data().len()];
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let plane = |s: usize| (s * c + ch) * hw..(s * c + ch + 1) * hw;
            let mean = (0..n)
                .map(|s| x.data()[plane(s)].iter().map(|v| v.as_f64()).sum::<f64>())
                .sum::<f64>()
                / m;
            let var = (0..n)
                .map(|s| x.data()[plane(s)].iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>())
                .sum::<f64>()
                / m;
            let inv = 1.0 / (var + self.eps).sqrt();
            inv_std[ch] = inv;
            let (gamma, beta) = (self.gamma[ch], self.beta[ch]);
            for s in 0..n {
                let r = plane(s);
                for ((yv, xh), xv) in y.data_mut()[r.clone()].iter_mut().zip(&mut x_hat[r.clone()]).zip(&x.data()[r]) {
                    *xh = T::of((xv.as_f64() - mean) * inv);
                    *yv = gamma * *xh + beta;
                }
            }
            let mo = self.momentum;
            self.running_mean[ch] = T::of(mo * self.running_mean[ch].as_f64() + (1.0 - mo) * mean);
            self.running_var[ch] = T::of(mo * self.running_var[ch].as_f64() + (1.0 - mo) * var);
        }
        self.cache = Some(BnCache {
            x_hat,
            inv_std,
            shape: x.shape(),
        });
        Ok(y)
    }

    pub fn backward(&mut self, g: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
        let cache = self.cache.as_ref().ok_or(NnError::NoForward("batchnorm"))?;
        expect_shape("batchnorm upstream gradient", cache.shape, g.shape())?;
        let [n, c, h, w] = cache.shape;
        let hw = h * w;
        let m = (n * hw) as f64;
        let mut gx = Tensor4::zeros(cache.shape);
        for ch in 0..c {
            let plane = |s: usize| (s * c + ch) * hw..(s * c + ch + 1) * hw;
            let (mut sum_g, mut sum_gx) = (0.0, 0.0);
            for s in 0..n {
                for (gv, xh) in g.data()[plane(s)].iter().zip(&cache.x_hat[plane(s)]) {
                    sum_g += gv.as_f64();
                    sum_gx += gv.as_f64() * xh.as_f64();
                }
            }
            self.grad_gamma[ch] += T::of(sum_gx);
            self.grad_beta[ch] += T::of(sum_g);
            let k = self.gamma[ch].as_f64() * cache.inv_std[ch] / m;
            for s in 0..n {
                let r = plane(s);
                for ((o, gv), xh) in gx.data_mut()[r.clone()].iter_mut().zip(&g.data()[r.clone()]).zip(&cache.x_hat[r]) {
                    *o = T::of(k * (m * gv.as_f64() - sum_g - xh.as_f64() * sum_gx));
                }
            }
        }
        Ok(gx)
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct Relu<T> {
    input: Option<Tensor4<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Relu { input: None }
    }

    pub fn forward_infer(&self, x: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
        Ok(x.map(|v| v.max(T::zero())))
    }

    pub fn forward_train(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
        self.input = Some(x.clone());
        self.forward_infer(x)
    }

    pub fn backward(&mut self, g: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
        let x = self.input.as_ref().ok_or(NnError::NoForward("relu"))?;
        expect_shape("relu upstream gradient", x.shape(), g.shape())?;
        let data = x
            .data()
            .iter()
            .zip(g.data())
            .map(|(&xv, &gv)| if xv > T::zero() { gv } else { T::zero() })
            .collect();
        Tensor4::new(x.shape(), data)
    }
}

// ---------------------------------------------------------------------------

/// Non-overlapping max pooling; trailing rows/columns that do not fill a
/// window are dropped.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub pool: (usize, usize),
    cache: Option<([usize; 4], Vec<u32>)>,
}

impl MaxPool2d {
    pub fn new(pool: (usize, usize)) -> Self {
        MaxPool2d { pool, cache: None }
    }

    pub fn output_shape(&self, [c, h, w]: [usize; 3]) -> Result<[usize; 3], NnError> {
        let (ph, pw) = self.pool;
        if ph == 0 || pw == 0 || h / ph == 0 || w / pw == 0 {
            return Err(NnError::Config(format!("maxpool {ph}x{pw} does not fit a {h}x{w} input")));
        }
        Ok([c, h / ph, w / pw])
    }

    fn run<T: Scalar>(&self, x: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<u32>), NnError> {
        let [n, c, h, w] = x.shape();
        let [_, ho, wo] = self.output_shape([c, h, w])?;
        let (ph, pw) = self.pool;
        let mut out = Tensor4::zeros([n, c, ho, wo]);
        let mut arg = vec![0u32; n * c * ho * wo];
        for plane in 0..n * c {
            let xin = &x.data()[plane * h * w..(plane + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = oy * ph * w + ox * pw;
                    for dy in 0..ph {
                        for dx in 0..pw {
                            let i = (oy * ph + dy) * w + ox * pw + dx;
                            if xin[i] > xin[best] {
                                best = i;
                            }
                        }
                    }
                    let o = plane * ho * wo + oy * wo + ox;
                    out.data_mut()[o] = xin[best];
                    arg[o] = best as u32;
                }
            }
        }
        Ok((out, arg))
    }

    pub fn forward_infer<T: Scalar>(&self, x: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
        Ok(self.run(x)?.0)
    }

    pub fn forward_train<T: Scalar>(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
        let (out, arg) = self.run(x)?;
        self.cache = Some((x.shape(), arg));
        Ok(out)
    }

    pub fn backward<T: Scalar>(&mut self, g: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
        let (shape, arg) = self.cache.as_ref().ok_or(NnError::NoForward("maxpool"))?;
        let [n, c, h, w] = *shape;
        let [_, ho, wo] = self.output_shape([c, h, w])?;
        expect_shape("maxpool upstream gradient", [n, c, ho, wo], g.shape())?;
        let mut gx = Tensor4::zeros(*shape);
        for (o, (&a, &gv)) in arg.iter().zip(g.data()).enumerate() {
            let plane = o / (ho * wo);
            gx.data_mut()[plane * h * w + a as usize] += gv;
        }
        Ok(gx)
    }
}

// ---------------------------------------------------------------------------

/// Affine map on the flattened sample; output shape `[out, 1, 1]`.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out][in]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub grad_weight: Vec<T>,
    pub grad_bias: Vec<T>,
    input: Option<Tensor4<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Dense {
            in_features,
            out_features,
            weight: vec![T::zero(); in_features * out_features],
            bias: vec![T::zero(); out_features],
            grad_weight: vec![T::zero(); in_features * out_features],
            grad_bias: vec![T::zero(); out_features],
            input: None,
        }
    }

    pub fn output_shape(&self, [c, h, w]: [usize; 3]) -> Result<[usize; 3], NnError> {
        if c * h * w != self.in_features {
            return Err(shape_err("dense input features", &[self.in_features], &[c, h, w]));
        }
        Ok([self.out_features, 1, 1])
    }

    pub fn forward_infer(&self, x: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
        let [n, c, h, w] = x.shape();
        self.output_shape([c, h, w])?;
        let d = self.in_features;
        let mut out = Tensor4::zeros([n, self.out_features, 1, 1]);
        for s in 0..n {
            let xs = x.sample(s);
            for o in 0..self.out_features {
                out.data_mut()[s * self.out_features + o] = self.bias[o] + dot(&self.weight[o * d..(o + 1) * d], xs);
            }
        }
        Ok(out)
    }

    pub fn forward_train(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
        let y = self.forward_infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, g: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
        let x = self.input.as_ref().ok_or(NnError::NoForward("dense"))?;
        let n = x.batch();
        expect_shape("dense upstream gradient", [n, self.out_features, 1, 1], g.shape())?;
        let d = self.in_features;
        let mut gx = Tensor4::zeros(x.shape());
        for s in 0..n {
            let xs = x.sample(s);
            let gs = &g.data()[s * self.out_features..(s + 1) * self.out_features];
            for (o, &go) in gs.iter().enumerate() {
                self.grad_bias[o] += go;
                axpy(go, xs, &mut self.grad_weight[o * d..(o + 1) * d]);
                axpy(go, &self.weight[o * d..(o + 1) * d], &mut gx.data_mut()[s * d..(s + 1) * d]);
            }
        }
        Ok(gx)
    }
}

// ---------------------------------------------------------------------------

/// Softmax over each sample's flattened values, with max subtraction.
#[derive(Debug, Clone, Default)]
pub struct Softmax<T> {
    output: Option<Tensor4<T>>,
}

impl<T: Scalar> Softmax<T> {
    pub fn new() -> Self {
        Softmax { output: None }
    }

    pub fn forward_infer(&self, x: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
        let mut y = x.clone();
        let k = x.sample_len();
        for row in y.data_mut().chunks_mut(k) {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let exps: Vec<f64> = row.iter().map(|&v| (v - max).as_f64().exp()).collect();
            let total: f64 = exps.iter().sum();
            for (r, e) in row.iter_mut().zip(exps) {
                *r = T::of(e / total);
            }
        }
        Ok(y)
    }

    pub fn forward_train(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
        let y = self.forward_infer(x)?;
        self.output = Some(y.clone());
        Ok(y)
    }

    pub fn backward(&mut self, g: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
        let p = self.output.as_ref().ok_or(NnError::NoForward("softmax"))?;
        expect_shape("softmax upstream gradient", p.shape(), g.shape())?;
        let k = p.sample_len();
        let mut gx = Tensor4::zeros(p.shape());
        for ((out, pr), gr) in gx.data_mut().chunks_mut(k).zip(p.data().chunks(k)).zip(g.data().chunks(k)) {
            let inner: f64 = pr.iter().zip(gr).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
            for ((o, &pv), &gv) in out.iter_mut().zip(pr).zip(gr) {
                *o = T::of(pv.as_f64() * (gv.as_f64() - inner));
            }
        }
        Ok(gx)
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    BatchNorm(BatchNorm2d<T>),
    Relu(Relu<T>),
    MaxPool(MaxPool2d),
    Dense(Dense<T>),
    Softmax(Softmax<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv2d(_) => LayerKind::Conv2d,
            Layer::BatchNorm(_) => LayerKind::BatchNorm,
            Layer::Relu(_) => LayerKind::Relu,
            Layer::MaxPool(_) => LayerKind::MaxPool,
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Softmax(_) => LayerKind::Softmax,
        }
    }

    pub fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3], NnError> {
        match self {
            Layer::Conv2d(l) => l.output_shape(input),
            Layer::BatchNorm(l) => l.output_shape(input),
            Layer::MaxPool(l) => l.output_shape(input),
            Layer::Dense(l) => l.output_shape(input),
            Layer::Relu(_) | Layer::Softmax(_) => Ok(input),
        }
    }

    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>, NnError> {
        if mode == Mode::Infer {
            return self.forward_infer(x);
        }
        match self {
            Layer::Conv2d(l) => l.forward_train(x),
            Layer::BatchNorm(l) => l.forward_train(x),
            Layer::Relu(l) => l.forward_train(x),
            Layer::MaxPool(l) => l.forward_train(x),
            Layer::Dense(l) => l.forward_train(x),
            Layer::Softmax(l) => l.forward_train(x),
        }
    }

    /// Read-only forward pass using running statistics.
    pub fn forward_infer(&self, x: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
        match self {
            Layer::Conv2d(l) => l.forward_infer(x),
            Layer::BatchNorm(l) => l.forward_infer(x),
            Layer::Relu(l) => l.forward_infer(x),
            Layer::MaxPool(l) => l.forward_infer(x),
            Layer::Dense(l) => l.forward_infer(x),
            Layer::Softmax(l) => l.forward_infer(x),
        }
    }

    /// Returns the input gradient and accumulates parameter gradients.
    pub fn backward(&mut self, g: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
        match self {
            Layer::Conv2d(l) => l.backward(g),
            Layer::BatchNorm(l) => l.backward(g),
            Layer::Relu(l) => l.backward(g),
            Layer::MaxPool(l) => l.backward(g),
            Layer::Dense(l) => l.backward(g),
            Layer::Softmax(l) => l.backward(g),
        }
    }

    pub fn params_mut(&mut self, prefix: &str) -> Vec<Param<'_, T>> {
        let p = |name: &str, value, grad| Param {
            name: format!("{prefix}.{name}"),
            value,
            grad,
        };
        match self {
            Layer::Conv2d(l) => vec![
                p("weight", &mut l.weight[..], &mut l.grad_weight[..]),
                p("bias", &mut l.bias[..], &mut l.grad_bias[..]),
            ],
            Layer::BatchNorm(l) => vec![
                p("gamma", &mut l.gamma[..], &mut l.grad_gamma[..]),
                p("beta", &mut l.beta[..], &mut l.grad_beta[..]),
            ],
            Layer::Dense(l) => vec![
                p("weight", &mut l.weight[..], &mut l.grad_weight[..]),
                p("bias", &mut l.bias[..], &mut l.grad_bias[..]),
            ],
            Layer::Relu(_) | Layer::MaxPool(_) | Layer::Softmax(_) => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv2d(l) => l.weight.len() + l.bias.len(),
            Layer::BatchNorm(l) => 2 * l.channels,
            Layer::Dense(l) => l.weight.len() + l.bias.len(),
            Layer::Relu(_) | Layer::MaxPool(_) | Layer::Softmax(_) => 0,
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut("") {
            p.grad.fill(T::zero());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: [usize; 4], data: &[f64]) -> Tensor4<f64> {
        Tensor4::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn relu_forward_and_backward() {
        let mut r = Relu::new();
        let y = r.forward_train(&t([1, 1, 1, 3], &[-1.0, 0.0, 2.0])).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let mut r = Relu::new();
        r.forward_train(&t([1, 1, 1, 2], &[-1.0, 2.0])).unwrap();
        let g = r.backward(&t([1, 1, 1, 2], &[5.0, 5.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 5.0]);
    }

    #[test]
    fn identity_kernel_conv() {
        let mut conv = Conv2d::<f64>::new(2, 2, (1, 1), (0, 0));
        conv.weight = vec![1.0, 0.0, 0.0, 1.0];
        let x = Tensor4::from_fn([3, 2, 4, 5], |i| (i as f64 * 0.37).sin());
        assert_eq!(conv.forward_infer(&x).unwrap(), x);
    }

    #[test]
    fn same_padding_conv_matches_naive() {
        let mut conv = Conv2d::<f64>::same(2, 3, 3);
        conv.weight = (0..conv.weight.len()).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
        conv.bias = vec![0.1, -0.2, 0.3];
        let x = Tensor4::from_fn([2, 2, 4, 6], |i| ((i * 13 % 17) as f64 - 8.0) / 8.0);
        let y = conv.forward_infer(&x).unwrap();
        assert_eq!(y.shape(), [2, 3, 4, 6]);
        for n in 0..2 {
            for oc in 0..3 {
                for oy in 0..4i64 {
                    for ox in 0..6i64 {
                        let mut acc = conv.bias[oc];
                        for ic in 0..2 {
                            for ky in 0..3i64 {
                                for kx in 0..3i64 {
                                    let (iy, ix) = (oy + ky - 1, ox + kx - 1);
                                    if (0..4).contains(&iy) && (0..6).contains(&ix) {
                                        let wv = conv.weight[((oc * 2 + ic) * 3 + ky as usize) * 3 + kx as usize];
                                        acc += wv * x.data()[((n * 2 + ic) * 4 + iy as usize) * 6 + ix as usize];
                                    }
                                }
                            }
                        }
                        let got = y.data()[((n * 3 + oc) * 4 + oy as usize) * 6 + ox as usize];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn batchnorm_train_normalizes_each_channel() {
        let mut bn = BatchNorm2d::<f64>::new(3);
        let x = Tensor4::from_fn([64, 3, 4, 4], |i| {
            let ch = (i / 16) % 3;
            (i as f64 * 1.618).sin() * (ch as f64 + 1.0) * 3.0 + ch as f64 * 10.0
        });
        let y = bn.forward_train(&x).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..64).flat_map(|s| y.data()[(s * 3 + ch) * 16..(s * 3 + ch + 1) * 16].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6, "channel {ch} mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "channel {ch} var {var}");
        }
        assert!(bn.running_var.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn batchnorm_infer_is_batch_independent() {
        let mut bn = BatchNorm2d::<f64>::new(2);
        bn.running_mean = vec![0.5, -1.0];
        bn.running_var = vec![2.0, 0.25];
        bn.gamma = vec![1.5, 0.5];
        bn.beta = vec![0.1, 0.2];
        let x = Tensor4::from_fn([5, 2, 3, 3], |i| (i as f64 * 0.77).cos());
        let full = bn.forward_infer(&x).unwrap();
        for s in 0..5 {
            let one = Tensor4::new([1, 2, 3, 3], x.sample(s).to_vec()).unwrap();
            assert_eq!(bn.forward_infer(&one).unwrap().data(), full.sample(s));
        }
    }

    #[test]
    fn maxpool_picks_window_max() {
        let mut mp = MaxPool2d::new((2, 2));
        let x = t([1, 1, 2, 4], &[1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 7.0, 6.0]);
        let y = mp.forward_train(&x).unwrap();
        assert_eq!(y.data(), &[5.0, 7.0]);
        let g = mp.backward(&t([1, 1, 1, 2], &[1.0, 2.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let s = Softmax::<f32>::new();
        let x = Tensor4::from_fn([4, 20, 1, 1], |i| (i as f32 * 0.9).sin() * 30.0);
        let y = s.forward_infer(&x).unwrap();
        for row in y.data().chunks(20) {
            let total: f64 = row.iter().map(|&v| v as f64).sum();
            assert!((total - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn backward_before_forward_is_an_error() {
        let mut layers: Vec<Layer<f64>> = vec![
            Layer::Conv2d(Conv2d::same(1, 1, 3)),
            Layer::BatchNorm(BatchNorm2d::new(1)),
            Layer::Relu(Relu::new()),
            Layer::MaxPool(MaxPool2d::new((2, 2))),
            Layer::Dense(Dense::new(4, 2)),
            Layer::Softmax(Softmax::new()),
        ];
        let g = Tensor4::zeros([1, 1, 2, 2]);
        for l in &mut layers {
            assert!(matches!(l.backward(&g), Err(NnError::NoForward(_))));
        }
    }

    #[test]
    fn shape_errors_report_both_shapes() {
        let d = Dense::<f64>::new(6, 2);
        let err = d.forward_infer(&Tensor4::zeros([1, 1, 2, 2])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[6]") && msg.contains("[1, 2, 2]"), "{msg}");
    }
}
