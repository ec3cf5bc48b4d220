//! The Pick-or-Mix operator.
//!
//! A PiX layer maps `X ∈ R^{C×H×W}` to `Y ∈ R^{⌈C/ζ⌉×H×W}`:
//!
//! 1. [`gca`] pools every channel to a scalar, `z[c] = mean |x[c,·,·]|`.
//! 2. [`predict_probabilities`] blends `z` into one probability per channel
//!    subset, `p = act(θ z + β)`.
//! 3. [`partition_channels`] splits the channels into contiguous subsets of
//!    at most `ζ` channels.
//! 4. [`fuse`] reduces each subset at every pixel with Max (when `p ≤ τ`) or
//!    Avg (when `p > τ`) and scales the result by `p`.
//!
//! [`pix_forward`] composes the steps and [`pix_backward`] returns the exact
//! gradients with the branch and argmax choices held fixed.

mod backward;
mod forward;
pub mod gradcheck;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use crate::rng::Prng;
use crate::tensor::Real;
use crate::{Error, Result};

pub use backward::{pix_backward, PixGradients};
pub use forward::{
    fuse, gca, pix_forward, predict_probabilities, Branch, FuseRecord, PixForwardCache,
};

/// Fusion operator selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum OpMode {
    /// Max when `p ≤ τ`, Avg otherwise.
    #[default]
    PickOrMix,
    MaxOnly,
    AvgOnly,
    MinOnly,
}

impl FromStr for OpMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pick-or-mix" | "pickormix" | "pix" | "max+avg" => Ok(OpMode::PickOrMix),
            "max" => Ok(OpMode::MaxOnly),
            "avg" => Ok(OpMode::AvgOnly),
            "min" => Ok(OpMode::MinOnly),
            _ => Err(Error::Param(format!(
                "unknown fusion mode {s:?} (expected pick-or-mix, max, avg or min)"
            ))),
        }
    }
}

impl fmt::Display for OpMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpMode::PickOrMix => "pick-or-mix",
            OpMode::MaxOnly => "max",
            OpMode::AvgOnly => "avg",
            OpMode::MinOnly => "min",
        })
    }
}

/// Squashing function of the probability predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Activation {
    #[default]
    Sigmoid,
    /// `0.5 · (1 + tanh(a))`.
    RescaledTanh,
}

impl Activation {
    /// Evaluates the activation, saturating at the representable values
    /// closest to 0 and 1 so that `p` stays inside the open unit interval.
    pub fn apply<T: Real>(self, a: T) -> T {
        let one = T::one();
        let half = T::lit(0.5);
        let p = match self {
            Activation::Sigmoid => {
                if a >= T::zero() {
                    one / (one + (-a).exp())
                } else {
                    let e = a.exp();
                    e / (one + e)
                }
            }
            Activation::RescaledTanh => half * (one + a.tanh()),
        };
        p.max(T::min_positive_value()).min(one - T::epsilon() * half)
    }

    /// `dp/da` written in terms of the output `p`.
    pub fn derivative_from_output<T: Real>(self, p: T) -> T {
        let s = p * (T::one() - p);
        match self {
            Activation::Sigmoid => s,
            Activation::RescaledTanh => s + s,
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" | "rescaled-tanh" => Ok(Activation::RescaledTanh),
            _ => Err(Error::Param(format!("unknown activation {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixConfig {
    /// Sampling factor: each output channel fuses at most `zeta` inputs.
    pub zeta: usize,
    /// Fusion threshold in `[0, 1]`.
    pub tau: f64,
    pub op_mode: OpMode,
    pub activation: Activation,
}

impl Default for PixConfig {
    fn default() -> Self {
        PixConfig {
            zeta: 1,
            tau: 0.5,
            op_mode: OpMode::PickOrMix,
            activation: Activation::Sigmoid,
        }
    }
}

impl PixConfig {
    pub fn new(zeta: usize) -> Self {
        PixConfig {
            zeta,
            ..Default::default()
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_mode(mut self, op_mode: OpMode) -> Self {
        self.op_mode = op_mode;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    /// Checks `1 ≤ ζ ≤ channels` and `τ ∈ [0, 1]`.
    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.zeta < 1 || self.zeta > channels {
            return Err(Error::Param(format!(
                "sampling factor zeta={} must lie in [1, {channels}]",
                self.zeta
            )));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Param(format!("tau={} must lie in [0, 1]", self.tau)));
        }
        Ok(())
    }

    pub fn out_channels(&self, channels: usize) -> usize {
        channels.div_ceil(self.zeta.max(1))
    }
}

/// Learnable predictor weights: `theta` is `subsets × channels` row-major,
/// `beta` has one bias per subset.
#[derive(Debug, Clone, PartialEq)]
pub struct PixParams<T = f32> {
    channels: usize,
    subsets: usize,
    pub theta: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Real> PixParams<T> {
    pub fn zeros(channels: usize, zeta: usize) -> Result<Self> {
        PixConfig::new(zeta).validate(channels)?;
        let subsets = channels.div_ceil(zeta);
        Ok(PixParams {
            channels,
            subsets,
            theta: vec![T::zero(); subsets * channels],
            beta: vec![T::zero(); subsets],
        })
    }

    /// Xavier-uniform weights on `±sqrt(6 / (C + ⌈C/ζ⌉))`, zero biases.
    pub fn xavier(channels: usize, zeta: usize, rng: &mut Prng) -> Result<Self> {
        let mut params = Self::zeros(channels, zeta)?;
        let bound = (6.0 / (channels + params.subsets) as f64).sqrt();
        for t in &mut params.theta {
            *t = T::lit(rng.uniform(-bound, bound));
        }
        Ok(params)
    }

    pub fn from_parts(channels: usize, subsets: usize, theta: Vec<T>, beta: Vec<T>) -> Result<Self> {
        if theta.len() != subsets * channels {
            return Err(Error::shape(
                "PiX theta",
                format!("{subsets}x{channels}"),
                format!("{} elements", theta.len()),
            ));
        }
        if beta.len() != subsets {
            return Err(Error::shape("PiX beta", subsets, beta.len()));
        }
        Ok(PixParams {
            channels,
            subsets,
            theta,
            beta,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn subsets(&self) -> usize {
        self.subsets
    }

    pub fn theta_row(&self, i: usize) -> &[T] {
        &self.theta[i * self.channels..(i + 1) * self.channels]
    }

    pub fn param_count(&self) -> usize {
        self.theta.len() + self.beta.len()
    }

    pub fn cast<U: Real>(&self) -> PixParams<U> {
        let conv = |v: &T| U::lit(v.to_f64().unwrap());
        PixParams {
            channels: self.channels,
            subsets: self.subsets,
            theta: self.theta.iter().map(conv).collect(),
            beta: self.beta.iter().map(conv).collect(),
        }
    }

    pub(crate) fn check_for(&self, channels: usize, cfg: &PixConfig) -> Result<()> {
        cfg.validate(channels)?;
        let subsets = cfg.out_channels(channels);
        if self.channels != channels || self.subsets != subsets {
            return Err(Error::shape(
                "PiX parameters",
                format!("theta {subsets}x{channels}"),
                format!("theta {}x{}", self.subsets, self.channels),
            ));
        }
        Ok(())
    }
}

/// Contiguous channel subsets `Γ[0..⌈C/ζ⌉)`, each of size `ζ` except possibly
/// the last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    channels: usize,
    ranges: Vec<Range<usize>>,
}

impl Partition {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn iter(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.ranges.iter().cloned()
    }
}

pub fn partition_channels(channels: usize, zeta: usize) -> Result<Partition> {
    if zeta < 1 || zeta > channels {
        return Err(Error::Param(format!(
            "cannot partition {channels} channels with zeta={zeta}"
        )));
    }
    let ranges = (0..channels)
        .step_by(zeta)
        .map(|start| start..(start + zeta).min(channels))
        .collect();
    Ok(Partition { channels, ranges })
}
