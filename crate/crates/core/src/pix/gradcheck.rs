//! Central finite-difference verification of [`pix_backward`](super::pix_backward).
//!
//! Instances are drawn in `f64` and rejected (then redrawn from a derived
//! seed) when a step of `step` could flip a non-differentiable decision: a
//! probability within `margin` of `τ`, a Max/Min winner within `margin` of the
//! runner-up, or an input within `margin` of zero.

use super::{pix_backward, pix_forward, Branch, OpMode, PixConfig, PixForwardCache, PixParams};
use crate::rng::{Prng, RngSeed};
use crate::tensor::{random_tensor, Distribution, Tensor};
use crate::{Error, Result};

/// Denominator floor of [`relative_error`].
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub cfg: PixConfig,
    pub step: f64,
    pub margin: f64,
    pub max_attempts: usize,
}

impl GradCheckOptions {
    pub fn new(channels: usize, height: usize, width: usize, cfg: PixConfig) -> Self {
        GradCheckOptions {
            channels,
            height,
            width,
            cfg,
            step: 1e-5,
            margin: 1e-3,
            max_attempts: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub dx: f64,
    pub dtheta: f64,
    pub dbeta: f64,
    /// Instances drawn before one passed the margin filter.
    pub attempts: usize,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.dx.max(self.dtheta).max(self.dbeta)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_error() <= tolerance
    }
}

struct Instance {
    x: Tensor<f64>,
    params: PixParams<f64>,
    dy: Tensor<f64>,
}

fn draw(opts: &GradCheckOptions, seed: RngSeed) -> Result<Instance> {
    let c = opts.channels;
    let s = opts.cfg.out_channels(c);
    let x = random_tensor((1, c, opts.height, opts.width), seed.derive(0), Distribution::Uniform);
    let dy = random_tensor((1, s, opts.height, opts.width), seed.derive(1), Distribution::Uniform);
    let mut rng = Prng::new(seed.derive(2));
    let bound = (6.0 / (c + s) as f64).sqrt() * 2.0;
    let theta = (0..s * c).map(|_| rng.uniform(-bound, bound)).collect();
    let beta = (0..s).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let params = PixParams::from_parts(c, s, theta, beta)?;
    Ok(Instance { x, params, dy })
}

/// True when no decision in `cache` sits within `margin` of flipping.
pub fn well_separated(cache: &PixForwardCache<f64>, cfg: &PixConfig, margin: f64) -> bool {
    let x = &cache.input;
    let hw = x.dims().spatial();
    if x.data().iter().any(|v| v.abs() <= margin) {
        return false;
    }
    for (i, range) in cache.partition.iter().enumerate() {
        if range.len() < 2 {
            continue;
        }
        if cfg.op_mode == OpMode::PickOrMix && (cache.probabilities[i] - cfg.tau).abs() <= margin {
            return false;
        }
        let branch = cache.record.branches[i];
        if branch == Branch::Avg {
            continue;
        }
        for k in 0..hw {
            let winner = cache.record.selected[i * hw + k] as usize;
            let best = x.data()[winner * hw + k];
            for c in range.clone().filter(|&c| c != winner) {
                if (best - x.data()[c * hw + k]).abs() <= margin {
                    return false;
                }
            }
        }
    }
    true
}

fn loss(x: &Tensor<f64>, params: &PixParams<f64>, dy: &Tensor<f64>, cfg: &PixConfig) -> f64 {
    let (y, _) = pix_forward(x, params, cfg).expect("validated instance");
    y.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum()
}

fn central(step: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(step) - f(-step)) / (2.0 * step)
}

/// Compares [`pix_backward`] with central differences of `L = Σ dy ⊙ y` on a
/// random well-separated instance derived from `seed`.
pub fn check_pix_gradients(opts: &GradCheckOptions, seed: RngSeed) -> Result<GradCheckReport> {
    opts.cfg.validate(opts.channels)?;
    if opts.height * opts.width == 0 {
        return Err(Error::Param("gradient check needs a non-empty spatial extent".into()));
    }
    let cfg = &opts.cfg;
    for attempt in 0..opts.max_attempts {
        let inst = draw(opts, seed.derive(attempt as u64))?;
        let (_, cache) = pix_forward(&inst.x, &inst.params, cfg)?;
        if !well_separated(&cache, cfg, opts.margin) {
            continue;
        }
        let grads = pix_backward(&inst.dy, &cache, &inst.params, cfg)?;
        let h = opts.step;

        let mut dx_err: f64 = 0.0;
        for i in 0..inst.x.data().len() {
            let numeric = central(h, |d| {
                let mut x = inst.x.clone();
                x.data_mut()[i] += d;
                loss(&x, &inst.params, &inst.dy, cfg)
            });
            dx_err = dx_err.max(relative_error(grads.dx.data()[i], numeric));
        }
        let mut dtheta_err: f64 = 0.0;
        for i in 0..inst.params.theta.len() {
            let numeric = central(h, |d| {
                let mut p = inst.params.clone();
                p.theta[i] += d;
                loss(&inst.x, &p, &inst.dy, cfg)
            });
            dtheta_err = dtheta_err.max(relative_error(grads.dtheta[i], numeric));
        }
        let mut dbeta_err: f64 = 0.0;
        for i in 0..inst.params.beta.len() {
            let numeric = central(h, |d| {
                let mut p = inst.params.clone();
                p.beta[i] += d;
                loss(&inst.x, &p, &inst.dy, cfg)
            });
            dbeta_err = dbeta_err.max(relative_error(grads.dbeta[i], numeric));
        }
        return Ok(GradCheckReport {
            dx: dx_err,
            dtheta: dtheta_err,
            dbeta: dbeta_err,
            attempts: attempt + 1,
        });
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
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(relative_error(1e-12, 0.0) < 1e-5);
    }

    #[test]
    fn small_instance_passes() {
        let opts = GradCheckOptions::new(8, 4, 4, PixConfig::new(2));
        let report = check_pix_gradients(&opts, RngSeed(42)).unwrap();
        assert!(report.passes(1e-5), "{report:?}");
    }

    #[test]
    fn non_divisible_and_other_modes_pass() {
        for cfg in [
            PixConfig::new(3),
            PixConfig::new(3).with_mode(OpMode::MinOnly),
            PixConfig::new(4).with_mode(OpMode::AvgOnly),
            PixConfig::new(2).with_activation(super::super::Activation::RescaledTanh),
        ] {
            let opts = GradCheckOptions::new(8, 3, 3, cfg);
            let report = check_pix_gradients(&opts, RngSeed(7)).unwrap();
            assert!(report.passes(1e-5), "{cfg:?}: {report:?}");
        }
    }
}
