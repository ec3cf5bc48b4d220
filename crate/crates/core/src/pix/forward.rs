use super::{partition_channels, OpMode, Partition, PixConfig, PixParams};
use crate::tensor::{Dims, Real, Tensor};
use crate::{Error, Result};

/// Reduction applied to a subset at every pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Max,
    Avg,
    Min,
}

impl Branch {
    pub(crate) fn select<T: Real>(p: T, cfg: &PixConfig) -> Branch {
        match cfg.op_mode {
            OpMode::PickOrMix => {
                if p.to_f64().unwrap() <= cfg.tau {
                    Branch::Max
                } else {
                    Branch::Avg
                }
            }
            OpMode::MaxOnly => Branch::Max,
            OpMode::AvgOnly => Branch::Avg,
            OpMode::MinOnly => Branch::Min,
        }
    }
}

/// What the backward pass needs from [`fuse`].
#[derive(Debug, Clone, PartialEq)]
pub struct FuseRecord<T = f32> {
    /// One branch per subset (`p` is constant over the pixels of a subset).
    pub branches: Vec<Branch>,
    /// `subsets × H·W` winning channel for Max/Min subsets; unused for Avg.
    pub selected: Vec<u32>,
    /// `subsets × H·W` unscaled fused values `m`, so that `y = p · m`.
    pub fused: Vec<T>,
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct PixForwardCache<T = f32> {
    pub input: Tensor<T>,
    pub z: Vec<T>,
    pub pre_activation: Vec<T>,
    pub probabilities: Vec<T>,
    pub partition: Partition,
    pub record: FuseRecord<T>,
}

fn require_single(x: &Tensor<impl Real>, context: &'static str) -> Result<()> {
    if x.dims().n != 1 {
        return Err(Error::shape(context, "batch size 1", x.dims()));
    }
    Ok(())
}

pub(crate) fn gca_sample<T: Real>(x: &[T], channels: usize, hw: usize) -> Vec<T> {
    let denom = T::from_count(hw);
    x.chunks_exact(hw)
        .take(channels)
        .map(|ch| ch.iter().fold(T::zero(), |acc, v| acc + v.abs()) / denom)
        .collect()
}

/// Global context aggregation: the ℓ1 norm of each channel divided by `H·W`.
pub fn gca<T: Real>(x: &Tensor<T>) -> Result<Vec<T>> {
    require_single(x, "gca")?;
    let d = x.dims();
    if d.spatial() == 0 {
        return Err(Error::Precondition(format!(
            "gca needs a non-empty spatial extent, got {d}"
        )));
    }
    Ok(gca_sample(x.data(), d.c, d.spatial()))
}

/// Returns the pre-activation `a = θ z + β` and the probabilities `act(a)`.
pub(crate) fn predictor<T: Real>(z: &[T], params: &PixParams<T>, cfg: &PixConfig) -> (Vec<T>, Vec<T>) {
    let a: Vec<T> = (0..params.subsets())
        .map(|i| {
            let dot = params
                .theta_row(i)
                .iter()
                .zip(z)
                .fold(T::zero(), |acc, (&t, &zc)| acc + t * zc);
            dot + params.beta[i]
        })
        .collect();
    let p = a.iter().map(|&ai| cfg.activation.apply(ai)).collect();
    (a, p)
}

/// Sampling probability per channel subset.
pub fn predict_probabilities<T: Real>(z: &[T], params: &PixParams<T>, cfg: &PixConfig) -> Result<Vec<T>> {
    let subsets = cfg.out_channels(z.len());
    if params.channels() != z.len() || params.subsets() != subsets {
        return Err(Error::shape(
            "predict_probabilities",
            format!("theta {}x{} for z of length {}", subsets, z.len(), z.len()),
            format!("theta {}x{}", params.subsets(), params.channels()),
        ));
    }
    Ok(predictor(z, params, cfg).1)
}

/// Fuses one sample laid out as `C × hw` into `y` (`subsets × hw`).
pub(crate) fn fuse_sample<T: Real>(
    x: &[T],
    hw: usize,
    p: &[T],
    part: &Partition,
    cfg: &PixConfig,
    y: &mut [T],
) -> FuseRecord<T> {
    let subsets = part.len();
    let mut record = FuseRecord {
        branches: Vec::with_capacity(subsets),
        selected: vec![u32::MAX; subsets * hw],
        fused: vec![T::zero(); subsets * hw],
    };
    for (i, range) in part.iter().enumerate() {
        let branch = Branch::select(p[i], cfg);
        record.branches.push(branch);
        let m = &mut record.fused[i * hw..(i + 1) * hw];
        let sel = &mut record.selected[i * hw..(i + 1) * hw];
        let first = &x[range.start * hw..(range.start + 1) * hw];
        m.copy_from_slice(first);
        match branch {
            Branch::Max | Branch::Min => {
                sel.fill(range.start as u32);
                for c in range.start + 1..range.end {
                    let ch = &x[c * hw..(c + 1) * hw];
                    for ((best, idx), &v) in m.iter_mut().zip(sel.iter_mut()).zip(ch) {
                        // strict comparison keeps the lowest index on ties
                        let better = if branch == Branch::Max { v > *best } else { v < *best };
                        if better {
                            *best = v;
                            *idx = c as u32;
                        }
                    }
                }
            }
            Branch::Avg => {
                for c in range.start + 1..range.end {
                    let ch = &x[c * hw..(c + 1) * hw];
                    for (acc, &v) in m.iter_mut().zip(ch) {
                        *acc += v;
                    }
                }
                let n = T::from_count(range.len());
                for acc in m.iter_mut() {
                    *acc = *acc / n;
                }
            }
        }
        let out = &mut y[i * hw..(i + 1) * hw];
        for (o, &v) in out.iter_mut().zip(m.iter()) {
            *o = p[i] * v;
        }
    }
    record
}

/// Per-pixel Pick-or-Mix fusion of every channel subset.
pub fn fuse<T: Real>(
    x: &Tensor<T>,
    p: &[T],
    part: &Partition,
    cfg: &PixConfig,
) -> Result<(Tensor<T>, FuseRecord<T>)> {
    require_single(x, "fuse")?;
    let d = x.dims();
    if d.c != part.channels() {
        return Err(Error::shape("fuse input channels", part.channels(), d.c));
    }
    if p.len() != part.len() {
        return Err(Error::shape("fuse probabilities", part.len(), p.len()));
    }
    let hw = d.spatial();
    let mut y = Tensor::zeros(Dims::new(1, part.len(), d.h, d.w));
    let record = fuse_sample(x.data(), hw, p, part, cfg, y.data_mut());
    Ok((y, record))
}

/// `gca → predict_probabilities → partition_channels → fuse` on one sample.
pub fn pix_forward<T: Real>(
    x: &Tensor<T>,
    params: &PixParams<T>,
    cfg: &PixConfig,
) -> Result<(Tensor<T>, PixForwardCache<T>)> {
    let d = x.dims();
    params.check_for(d.c, cfg)?;
    let z = gca(x)?;
    let (pre_activation, probabilities) = predictor(&z, params, cfg);
    let partition = partition_channels(d.c, cfg.zeta)?;
    let (y, record) = fuse(x, &probabilities, &partition, cfg)?;
    let cache = PixForwardCache {
        input: x.clone(),
        z,
        pre_activation,
        probabilities,
        partition,
        record,
    };
    Ok((y, cache))
}
