use super::layers::softmax_cross_entropy;
use super::model::{build_network, Arch, Layer, LayerCache, Model};
use crate::pix::gradcheck::relative_error;
use crate::pix::{Branch, OpMode, PixConfig, PixForwardCache};
use crate::rng::{Prng, RngSeed};
use crate::tensor::{random_tensor, Distribution, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelCheckOptions {
    pub arch: Arch,
    pub cfg: PixConfig,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub step: f64,
    /// Minimum distance of every PiX decision (p vs τ, max/min winner vs
    /// the rest of its subset) from flipping.
    pub pix_margin: f64,
    /// Minimum |pre-activation| at every ReLU.
    pub relu_margin: f64,
    pub max_attempts: usize,
}

impl ModelCheckOptions {
    pub fn new(arch: Arch, cfg: PixConfig) -> Self {
        ModelCheckOptions {
            arch,
            cfg,
            batch: 4,
            height: 3,
            width: 3,
            step: 1e-5,
            pix_margin: 1e-3,
            relu_margin: 1e-4,
            max_attempts: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckReport {
    /// Largest relative error per parameter tensor, in `Model::parameters` order.
    pub per_tensor: Vec<f64>,
    pub checked: usize,
    pub attempts: usize,
}

impl ModelCheckReport {
    pub fn max_error(&self) -> f64 {
        self.per_tensor.iter().copied().fold(0.0, f64::max)
    }
}

fn pix_separated(cache: &PixForwardCache<f64>, cfg: &PixConfig, margin: f64) -> bool {
    let x = cache.input.data();
    let hw = cache.input.dims().spatial();
    for (i, range) in cache.partition.iter().enumerate() {
        if range.len() < 2 {
            continue;
        }
        if cfg.op_mode == OpMode::PickOrMix && (cache.probabilities[i] - cfg.tau).abs() <= margin {
            return false;
        }
        if cache.record.branches[i] == Branch::Avg {
            continue;
        }
        for k in 0..hw {
            let winner = cache.record.selected[i * hw + k] as usize;
            let best = x[winner * hw + k];
            for c in range.clone().filter(|&c| c != winner) {
                let v = x[c * hw + k];
                // exact zeros come from inactive ReLUs and stay put
                let both_zero = best == 0.0 && v == 0.0;
                if !both_zero && (best - v).abs() <= margin {
                    return false;
                }
            }
        }
    }
    true
}

fn separated(model: &Model<f64>, caches: &[LayerCache<f64>], opts: &ModelCheckOptions) -> bool {
    model.layers.iter().zip(caches).all(|(layer, cache)| match (layer, cache) {
        (Layer::Relu, LayerCache::Input(x)) => x.data().iter().all(|v| v.abs() > opts.relu_margin),
        (Layer::Pix(p), LayerCache::Pix(samples)) => {
            samples.iter().all(|c| pix_separated(c, &p.config, opts.pix_margin))
        }
        _ => true,
    })
}

fn loss(model: &Model<f64>, x: &Tensor<f64>, labels: &[usize]) -> f64 {
    let logits = model.forward(x).expect("validated instance");
    softmax_cross_entropy(&logits, labels).expect("validated instance").0
}

/// Compares [`Model::backward`] with central differences of the mean
/// cross-entropy, for every parameter of a freshly built network on a
/// random batch in `[0, 1]`. Instances near a ReLU kink or a PiX decision
/// boundary are redrawn.
pub fn check_model_gradients(opts: &ModelCheckOptions, seed: RngSeed) -> Result<ModelCheckReport> {
    if opts.batch == 0 || opts.height == 0 || opts.width == 0 {
        return Err(Error::Param("gradient check needs a non-empty batch".into()));
    }
    for attempt in 0..opts.max_attempts {
        let s = seed.derive(attempt as u64);
        let model: Model<f64> = build_network(opts.arch, &opts.cfg, s.derive(0))?;
        let x = random_tensor::<f64>((opts.batch, 3, opts.height, opts.width), s.derive(1), Distribution::Uniform)
            .map(|v| 0.5 * (v + 1.0));
        let mut rng = Prng::new(s.derive(2));
        let labels: Vec<usize> = (0..opts.batch).map(|_| rng.below(10)).collect();

        let (logits, caches) = model.forward_cached(&x)?;
        if !separated(&model, &caches, opts) {
            continue;
        }
        let (_, dlogits) = softmax_cross_entropy(&logits, &labels)?;
        let grads = model.backward(&caches, &dlogits)?;

        let mut probe = model.clone();
        let mut per_tensor = Vec::with_capacity(grads.0.len());
        let mut checked = 0;
        for (t, analytic) in grads.0.iter().enumerate() {
            let mut worst: f64 = 0.0;
            for (j, &a) in analytic.iter().enumerate() {
                let original = probe.parameters()[t][j];
                probe.parameters_mut()[t][j] = original + opts.step;
                let plus = loss(&probe, &x, &labels);
                probe.parameters_mut()[t][j] = original - opts.step;
                let minus = loss(&probe, &x, &labels);
                probe.parameters_mut()[t][j] = original;
                let numeric = (plus - minus) / (2.0 * opts.step);
                worst = worst.max(relative_error(a, numeric));
                checked += 1;
            }
            per_tensor.push(worst);
        }
        return Ok(ModelCheckReport { per_tensor, checked, attempts: attempt + 1 });
    }
    Err(Error::Precondition(format!(
        "no well-separated instance found in {} attempts",
        opts.max_attempts
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_networks_pass() {
        for arch in [Arch::TinyPixnet, Arch::TinyBaseline] {
            let report = check_model_gradients(&ModelCheckOptions::new(arch, PixConfig::new(2)), RngSeed(7)).unwrap();
            assert!(report.max_error() <= 1e-4, "{arch}: {report:?}");
        }
    }
}
