use std::fmt;
use std::str::FromStr;

use super::layers::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, softmax_cross_entropy, Conv2d,
    FullyConnected,
};
use crate::pix::{pix_backward, pix_forward, PixConfig, PixForwardCache, PixParams};
use crate::rng::{Prng, RngSeed};
use crate::tensor::{Dims, Real, Tensor};
use crate::{Error, Result};

const WIDTH: usize = 32;
const CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct PixLayer<T = f32> {
    pub config: PixConfig,
    pub params: PixParams<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T = f32> {
    Conv2d(Conv2d<T>),
    Relu,
    GlobalAvgPool,
    FullyConnected(FullyConnected<T>),
    Pix(PixLayer<T>),
}

impl<T: Real> Layer<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Relu => "relu",
            Layer::GlobalAvgPool => "global_avg_pool",
            Layer::FullyConnected(_) => "fully_connected",
            Layer::Pix(_) => "pix",
        }
    }

    fn parameters(&self) -> Vec<&[T]> {
        match self {
            Layer::Conv2d(c) => {
                let mut v = vec![c.weight.as_slice()];
                if let Some(b) = &c.bias {
                    v.push(b);
                }
                v
            }
            Layer::FullyConnected(f) => vec![&f.weight, &f.bias],
            Layer::Pix(p) => vec![&p.params.theta, &p.params.beta],
            Layer::Relu | Layer::GlobalAvgPool => Vec::new(),
        }
    }

    fn parameters_mut(&mut self) -> Vec<&mut Vec<T>> {
        match self {
            Layer::Conv2d(c) => {
                let mut v = vec![&mut c.weight];
                if let Some(b) = &mut c.bias {
                    v.push(b);
                }
                v
            }
            Layer::FullyConnected(f) => vec![&mut f.weight, &mut f.bias],
            Layer::Pix(p) => vec![&mut p.params.theta, &mut p.params.beta],
            Layer::Relu | Layer::GlobalAvgPool => Vec::new(),
        }
    }

    fn cast<U: Real>(&self) -> Layer<U> {
        let v = |xs: &Vec<T>| xs.iter().map(|&x| U::lit(x.to_f64().unwrap_or(f64::NAN))).collect();
        match self {
            Layer::Conv2d(c) => Layer::Conv2d(Conv2d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
                stride: c.stride,
                pad: c.pad,
                weight: v(&c.weight),
                bias: c.bias.as_ref().map(v),
            }),
            Layer::Relu => Layer::Relu,
            Layer::GlobalAvgPool => Layer::GlobalAvgPool,
            Layer::FullyConnected(f) => Layer::FullyConnected(FullyConnected {
                in_features: f.in_features,
                out_features: f.out_features,
                weight: v(&f.weight),
                bias: v(&f.bias),
            }),
            Layer::Pix(p) => Layer::Pix(PixLayer { config: p.config, params: p.params.cast() }),
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, LayerCache<T>)> {
        Ok(match self {
            Layer::Conv2d(c) => (c.forward(x)?, LayerCache::Input(x.clone())),
            Layer::Relu => (relu(x), LayerCache::Input(x.clone())),
            Layer::GlobalAvgPool => (global_avg_pool(x)?, LayerCache::Dims(x.dims())),
            Layer::FullyConnected(f) => (f.forward(x)?, LayerCache::Input(x.clone())),
            Layer::Pix(p) => {
                let mut outputs = Vec::with_capacity(x.dims().n);
                let mut caches = Vec::with_capacity(x.dims().n);
                for n in 0..x.dims().n {
                    let (y, cache) = pix_forward(&x.sample_tensor(n), &p.params, &p.config)?;
                    outputs.push(y);
                    caches.push(cache);
                }
                (Tensor::stack(&outputs)?, LayerCache::Pix(caches))
            }
        })
    }
}

/// Per-layer state saved by [`Model::forward_cached`].
#[derive(Debug, Clone)]
pub enum LayerCache<T = f32> {
    /// The layer's input.
    Input(Tensor<T>),
    /// Input dims only (global pooling).
    Dims(Dims),
    /// One cache per sample.
    Pix(Vec<PixForwardCache<T>>),
}

/// Parameter gradients in [`Model::parameters`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f32>(pub Vec<Vec<T>>);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    /// Conv-ReLU-PiX twice, then global pooling and a linear head.
    TinyPixnet,
    /// The same trunk with each PiX replaced by a 1x1 conv and ReLU.
    TinyBaseline,
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "tiny_pixnet" => Ok(Arch::TinyPixnet),
            "tiny_baseline" => Ok(Arch::TinyBaseline),
            other => Err(Error::Param(format!(
                "unknown architecture `{other}` (expected tiny_pixnet or tiny_baseline)"
            ))),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::TinyPixnet => "tiny_pixnet",
            Arch::TinyBaseline => "tiny_baseline",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T = f32> {
    pub layers: Vec<Layer<T>>,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> Model<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        let velocity = layers
            .iter()
            .flat_map(|l| l.parameters())
            .map(|p| vec![T::zero(); p.len()])
            .collect();
        Model { layers, velocity }
    }

    pub fn parameters(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(|l| l.parameters()).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| l.parameters_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    /// Converts every parameter; momentum buffers are reset.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model::new(self.layers.iter().map(|l| l.cast()).collect())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<LayerCache<T>>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (y, cache) = layer.forward(&h)?;
            caches.push(cache);
            h = y;
        }
        Ok((h, caches))
    }

    /// Backpropagates `dy` (gradient w.r.t. the model output).
    pub fn backward(&self, caches: &[LayerCache<T>], dy: &Tensor<T>) -> Result<Gradients<T>> {
        if caches.len() != self.layers.len() {
            return Err(Error::shape("model backward caches", self.layers.len(), caches.len()));
        }
        let mut per_layer: Vec<Vec<Vec<T>>> = vec![Vec::new(); self.layers.len()];
        let mut g = dy.clone();
        for (idx, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let need_dx = idx > 0;
            g = match (layer, cache) {
                (Layer::Conv2d(c), LayerCache::Input(x)) => {
                    let grads = c.backward(x, &g, need_dx)?;
                    per_layer[idx].push(grads.dweight);
                    if let Some(db) = grads.dbias {
                        per_layer[idx].push(db);
                    }
                    match grads.dx {
                        Some(dx) => dx,
                        None => Tensor::zeros(x.dims()),
                    }
                }
                (Layer::Relu, LayerCache::Input(x)) => relu_backward(x, &g)?,
                (Layer::GlobalAvgPool, LayerCache::Dims(d)) => global_avg_pool_backward(*d, &g)?,
                (Layer::FullyConnected(f), LayerCache::Input(x)) => {
                    let grads = f.backward(x, &g)?;
                    per_layer[idx].push(grads.dweight);
                    per_layer[idx].push(grads.dbias);
                    grads.dx
                }
                (Layer::Pix(p), LayerCache::Pix(samples)) => {
                    let mut dtheta = vec![T::zero(); p.params.theta.len()];
                    let mut dbeta = vec![T::zero(); p.params.beta.len()];
                    let mut dxs = Vec::with_capacity(samples.len());
                    for (n, cache) in samples.iter().enumerate() {
                        let grads = pix_backward(&g.sample_tensor(n), cache, &p.params, &p.config)?;
                        for (a, &b) in dtheta.iter_mut().zip(&grads.dtheta) {
                            *a += b;
                        }
                        for (a, &b) in dbeta.iter_mut().zip(&grads.dbeta) {
                            *a += b;
                        }
                        dxs.push(grads.dx);
                    }
                    per_layer[idx].push(dtheta);
                    per_layer[idx].push(dbeta);
                    Tensor::stack(&dxs)?
                }
                _ => {
                    return Err(Error::Precondition(format!(
                        "cache for layer {idx} does not belong to a {} layer",
                        layer.name()
                    )))
                }
            };
        }
        Ok(Gradients(per_layer.into_iter().flatten().collect()))
    }

    /// Mean cross-entropy, the logits and all parameter gradients.
    pub fn loss_and_gradients(&self, x: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>, Gradients<T>)> {
        let (logits, caches) = self.forward_cached(x)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, labels)?;
        let grads = self.backward(&caches, &dlogits)?;
        Ok((loss, logits, grads))
    }
}

/// Momentum SGD: `v ← μ·v + g`, `w ← w − lr·v`.
pub fn sgd_step<T: Real>(model: &mut Model<T>, grads: &Gradients<T>, lr: T, momentum: T) -> Result<()> {
    let shapes: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
    let given: Vec<usize> = grads.0.iter().map(Vec::len).collect();
    if shapes != given {
        return Err(Error::shape("sgd_step gradient layout", format!("{shapes:?}"), format!("{given:?}")));
    }
    let mut velocity = std::mem::take(&mut model.velocity);
    for ((w, v), g) in model.parameters_mut().into_iter().zip(&mut velocity).zip(&grads.0) {
        for ((wi, vi), &gi) in w.iter_mut().zip(v.iter_mut()).zip(g) {
            *vi = momentum * *vi + gi;
            *wi -= lr * *vi;
        }
    }
    model.velocity = velocity;
    Ok(())
}

/// Builds one of the two reference CIFAR-sized networks (3×32×32 input,
/// 10 classes, width 32). `cfg.zeta` sets the PiX reduction, or the 1x1
/// conv width `⌈32/ζ⌉` for the baseline.
pub fn build_network<T: Real>(arch: Arch, cfg: &PixConfig, seed: RngSeed) -> Result<Model<T>> {
    if cfg.zeta == 0 || cfg.zeta > WIDTH {
        return Err(Error::Param(format!("zeta must be in 1..={WIDTH}, got {}", cfg.zeta)));
    }
    cfg.validate(WIDTH)?;
    let reduced = WIDTH.div_ceil(cfg.zeta);
    let mut rng = Prng::new(seed);
    let mut layers = Vec::new();
    for block in 0..2 {
        let in_ch = if block == 0 { 3 } else { reduced };
        layers.push(Layer::Conv2d(Conv2d::he_uniform(in_ch, WIDTH, 3, 1, 1, true, &mut rng)));
        layers.push(Layer::Relu);
        match arch {
            Arch::TinyPixnet => layers.push(Layer::Pix(PixLayer {
                config: *cfg,
                params: PixParams::xavier(WIDTH, cfg.zeta, &mut rng)?,
            })),
            Arch::TinyBaseline => {
                layers.push(Layer::Conv2d(Conv2d::he_uniform(WIDTH, reduced, 1, 1, 0, true, &mut rng)));
                layers.push(Layer::Relu);
            }
        }
    }
    layers.push(Layer::GlobalAvgPool);
    layers.push(Layer::FullyConnected(FullyConnected::he_uniform(reduced, CLASSES, &mut rng)));
    Ok(Model::new(layers))
}
