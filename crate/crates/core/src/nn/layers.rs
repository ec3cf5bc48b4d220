use crate::rng::Prng;
use crate::tensor::{Dims, Real, Tensor};
use crate::{Error, Result};

/// 2-D convolution via per-sample im2col. Weights are `[out][in][k][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T = f32> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGradients<T> {
    pub dx: Option<Tensor<T>>,
    pub dweight: Vec<T>,
    pub dbias: Option<Vec<T>>,
}

/// Output positions `lo..hi` whose input column `o·stride + j - pad` is in
/// bounds.
fn valid_range(j: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > j { (pad - j).div_ceil(stride) } else { 0 };
    let hi = if in_len + pad > j {
        ((in_len - 1 + pad - j) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Dot product with eight fixed partial sums (vectorizes; order is fixed, so
/// results are reproducible).
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail = ca.remainder().iter().zip(cb.remainder()).fold(T::zero(), |s, (&x, &y)| s + x * y);
    for (xa, xb) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    acc.iter().copied().sum::<T>() + tail
}

impl<T: Real> Conv2d<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize, bias: bool) -> Self {
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            weight: vec![T::zero(); out_channels * in_channels * kernel * kernel],
            bias: bias.then(|| vec![T::zero(); out_channels]),
        }
    }

    /// He-uniform weights on `±sqrt(6 / fan_in)`, zero bias.
    pub fn he_uniform(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut Prng,
    ) -> Self {
        let mut conv = Self::zeros(in_channels, out_channels, kernel, stride, pad, bias);
        let bound = (6.0 / (in_channels * kernel * kernel) as f64).sqrt();
        for w in &mut conv.weight {
            *w = T::lit(rng.uniform(-bound, bound));
        }
        conv
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Unfolds one sample into a `(C·k·k) × (Ho·Wo)` matrix; padding reads
    /// as zero.
    fn im2col(&self, xs: &[T], xd: Dims, yd: Dims) -> Vec<T> {
        let (k, s, p) = (self.kernel, self.stride, self.pad);
        let (hw_in, hw_out) = (xd.spatial(), yd.spatial());
        let mut cols = vec![T::zero(); self.patch_len() * hw_out];
        for c in 0..self.in_channels {
            let xc = &xs[c * hw_in..(c + 1) * hw_in];
            for i in 0..k {
                let (oh_lo, oh_hi) = valid_range(i, p, s, xd.h, yd.h);
                for j in 0..k {
                    let (ow_lo, ow_hi) = valid_range(j, p, s, xd.w, yd.w);
                    let r = (c * k + i) * k + j;
                    let row = &mut cols[r * hw_out..(r + 1) * hw_out];
                    for oh in oh_lo..oh_hi {
                        let xrow = &xc[(oh * s + i - p) * xd.w..];
                        for ow in ow_lo..ow_hi {
                            row[oh * yd.w + ow] = xrow[ow * s + j - p];
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`Self::im2col`]: scatters column gradients back onto the
    /// input grid.
    fn col2im(&self, cols: &[T], dxs: &mut [T], xd: Dims, yd: Dims) {
        let (k, s, p) = (self.kernel, self.stride, self.pad);
        let (hw_in, hw_out) = (xd.spatial(), yd.spatial());
        for c in 0..self.in_channels {
            let dxc = &mut dxs[c * hw_in..(c + 1) * hw_in];
            for i in 0..k {
                let (oh_lo, oh_hi) = valid_range(i, p, s, xd.h, yd.h);
                for j in 0..k {
                    let (ow_lo, ow_hi) = valid_range(j, p, s, xd.w, yd.w);
                    let r = (c * k + i) * k + j;
                    let row = &cols[r * hw_out..(r + 1) * hw_out];
                    for oh in oh_lo..oh_hi {
                        let dxrow = &mut dxc[(oh * s + i - p) * xd.w..];
                        for ow in ow_lo..ow_hi {
                            dxrow[ow * s + j - p] += row[oh * yd.w + ow];
                        }
                    }
                }
            }
        }
    }

    pub fn output_dims(&self, d: Dims) -> Result<Dims> {
        if d.c != self.in_channels {
            return Err(Error::shape("conv2d input channels", self.in_channels, d.c));
        }
        let (k, s, p) = (self.kernel, self.stride, self.pad);
        if s == 0 || d.h + 2 * p < k || d.w + 2 * p < k {
            return Err(Error::shape(
                "conv2d spatial extent",
                format!("at least {k}x{k} after padding {p}"),
                d,
            ));
        }
        Ok(Dims::new(d.n, self.out_channels, (d.h + 2 * p - k) / s + 1, (d.w + 2 * p - k) / s + 1))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let xd = x.dims();
        let yd = self.output_dims(xd)?;
        let mut y = Tensor::zeros(yd);
        let (r_len, hw_out) = (self.patch_len(), yd.spatial());
        for n in 0..xd.n {
            let cols = self.im2col(x.sample(n), xd, yd);
            let ys = y.sample_mut(n);
            for o in 0..self.out_channels {
                let plane = &mut ys[o * hw_out..(o + 1) * hw_out];
                if let Some(b) = &self.bias {
                    plane.fill(b[o]);
                }
                let wrow = &self.weight[o * r_len..(o + 1) * r_len];
                for (&wv, col) in wrow.iter().zip(cols.chunks_exact(hw_out)) {
                    for (yv, &cv) in plane.iter_mut().zip(col) {
                        *yv += wv * cv;
                    }
                }
            }
        }
        Ok(y)
    }

    /// Gradients given the forward input `x` and `dy = ∂L/∂y`. The input
    /// gradient is skipped when `need_dx` is false (first layer).
    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, need_dx: bool) -> Result<ConvGradients<T>> {
        let xd = x.dims();
        let yd = self.output_dims(xd)?;
        if dy.dims() != yd {
            return Err(Error::shape("conv2d backward dy", yd, dy.dims()));
        }
        let (r_len, hw_out) = (self.patch_len(), yd.spatial());
        let mut dweight = vec![T::zero(); self.weight.len()];
        let mut dbias = self.bias.as_ref().map(|b| vec![T::zero(); b.len()]);
        let mut dx = need_dx.then(|| Tensor::zeros(xd));
        let mut dcols = vec![T::zero(); r_len * hw_out];
        for n in 0..xd.n {
            let cols = self.im2col(x.sample(n), xd, yd);
            let dys = dy.sample(n);
            dcols.fill(T::zero());
            for o in 0..self.out_channels {
                let g = &dys[o * hw_out..(o + 1) * hw_out];
                if let Some(db) = dbias.as_mut() {
                    db[o] += g.iter().copied().sum::<T>();
                }
                let wrow = &self.weight[o * r_len..(o + 1) * r_len];
                let dwrow = &mut dweight[o * r_len..(o + 1) * r_len];
                for (r, col) in cols.chunks_exact(hw_out).enumerate() {
                    dwrow[r] += dot(g, col);
                }
                if need_dx {
                    for (&wv, dcol) in wrow.iter().zip(dcols.chunks_exact_mut(hw_out)) {
                        for (d, &gv) in dcol.iter_mut().zip(g) {
                            *d += wv * gv;
                        }
                    }
                }
            }
            if let Some(dx) = dx.as_mut() {
                self.col2im(&dcols, dx.sample_mut(n), xd, yd);
            }
        }
        Ok(ConvGradients { dx, dweight, dbias })
    }
}

/// Dense layer on the flattened `C·H·W` features; weights are `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullyConnected<T = f32> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcGradients<T> {
    pub dx: Tensor<T>,
    pub dweight: Vec<T>,
    pub dbias: Vec<T>,
}

impl<T: Real> FullyConnected<T> {
    pub fn he_uniform(in_features: usize, out_features: usize, rng: &mut Prng) -> Self {
        let bound = (6.0 / in_features as f64).sqrt();
        FullyConnected {
            in_features,
            out_features,
            weight: (0..in_features * out_features)
                .map(|_| T::lit(rng.uniform(-bound, bound)))
                .collect(),
            bias: vec![T::zero(); out_features],
        }
    }

    fn check(&self, d: Dims) -> Result<()> {
        if d.sample_len() != self.in_features {
            return Err(Error::shape("fully_connected input features", self.in_features, d));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let d = x.dims();
        self.check(d)?;
        let mut y = Tensor::zeros(Dims::new(d.n, self.out_features, 1, 1));
        for n in 0..d.n {
            let xs = x.sample(n);
            let ys = y.sample_mut(n);
            for (o, yo) in ys.iter_mut().enumerate() {
                let row = &self.weight[o * self.in_features..(o + 1) * self.in_features];
                *yo = self.bias[o] + dot(row, xs);
            }
        }
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<FcGradients<T>> {
        let d = x.dims();
        self.check(d)?;
        let yd = Dims::new(d.n, self.out_features, 1, 1);
        if dy.dims() != yd {
            return Err(Error::shape("fully_connected backward dy", yd, dy.dims()));
        }
        let mut dx = Tensor::zeros(d);
        let mut dweight = vec![T::zero(); self.weight.len()];
        let mut dbias = vec![T::zero(); self.out_features];
        for n in 0..d.n {
            let xs = x.sample(n);
            let gs = dy.sample(n);
            let dxs = dx.sample_mut(n);
            for (o, &g) in gs.iter().enumerate() {
                dbias[o] += g;
                let row = &self.weight[o * self.in_features..(o + 1) * self.in_features];
                let drow = &mut dweight[o * self.in_features..(o + 1) * self.in_features];
                for ((dw, dxv), (&w, &v)) in drow.iter_mut().zip(dxs.iter_mut()).zip(row.iter().zip(xs)) {
                    *dw += g * v;
                    *dxv += g * w;
                }
            }
        }
        Ok(FcGradients { dx, dweight, dbias })
    }
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `dy` where the forward input was strictly positive.
pub fn relu_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if x.dims() != dy.dims() {
        return Err(Error::shape("relu backward", x.dims(), dy.dims()));
    }
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.dims(), data)
}

pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let d = x.dims();
    let hw = d.spatial();
    if hw == 0 {
        return Err(Error::Precondition(format!("global pool of empty extent {d}")));
    }
    let denom = T::from_count(hw);
    let data = x
        .data()
        .chunks_exact(hw)
        .map(|ch| ch.iter().copied().sum::<T>() / denom)
        .collect();
    Tensor::from_vec(Dims::new(d.n, d.c, 1, 1), data)
}

pub fn global_avg_pool_backward<T: Real>(input_dims: Dims, dy: &Tensor<T>) -> Result<Tensor<T>> {
    let expected = Dims::new(input_dims.n, input_dims.c, 1, 1);
    if dy.dims() != expected {
        return Err(Error::shape("global pool backward", expected, dy.dims()));
    }
    let hw = input_dims.spatial();
    let denom = T::from_count(hw);
    let mut dx = Tensor::zeros(input_dims);
    for (chunk, &g) in dx.data_mut().chunks_exact_mut(hw).zip(dy.data()) {
        chunk.fill(g / denom);
    }
    Ok(dx)
}

/// Mean cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let d = logits.dims();
    if labels.len() != d.n {
        return Err(Error::shape("softmax_cross_entropy labels", d.n, labels.len()));
    }
    let classes = d.sample_len();
    let batch = T::from_count(d.n);
    let mut grad = Tensor::zeros(d);
    let mut total = T::zero();
    for (n, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::Param(format!("label {label} out of range for {classes} classes")));
        }
        let z = logits.sample(n);
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
        let sum: T = exps.iter().copied().sum();
        total += sum.ln() + max - z[label];
        for (k, (g, &e)) in grad.sample_mut(n).iter_mut().zip(&exps).enumerate() {
            let onehot = if k == label { T::one() } else { T::zero() };
            *g = (e / sum - onehot) / batch;
        }
    }
    Ok((total / batch, grad))
}
