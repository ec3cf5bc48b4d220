use super::{Branch, PixConfig, PixForwardCache, PixParams};
use crate::tensor::{Dims, Real, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PixGradients<T = f32> {
    pub dx: Tensor<T>,
    /// Same `subsets × channels` layout as [`PixParams::theta`].
    pub dtheta: Vec<T>,
    pub dbeta: Vec<T>,
}

fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Gradients of a scalar loss with respect to the input and the predictor
/// parameters, given `dy = ∂L/∂y`.
///
/// The Max/Avg choice and the per-pixel argmax recorded in `cache` are treated
/// as constants, the usual subgradient convention for max pooling.
pub fn pix_backward<T: Real>(
    dy: &Tensor<T>,
    cache: &PixForwardCache<T>,
    params: &PixParams<T>,
    cfg: &PixConfig,
) -> Result<PixGradients<T>> {
    let xd = cache.input.dims();
    let subsets = cache.partition.len();
    let expected = Dims::new(1, subsets, xd.h, xd.w);
    if dy.dims() != expected {
        return Err(Error::shape("pix_backward dy", expected, dy.dims()));
    }
    if params.channels() != xd.c || params.subsets() != subsets {
        return Err(Error::shape(
            "pix_backward parameters",
            format!("theta {subsets}x{}", xd.c),
            format!("theta {}x{}", params.subsets(), params.channels()),
        ));
    }
    let hw = xd.spatial();
    let channels = xd.c;
    let p = &cache.probabilities;
    let rec = &cache.record;
    let x = cache.input.data();
    let dyd = dy.data();

    // probability path: y = p · m
    let da: Vec<T> = (0..subsets)
        .map(|i| {
            let dp = dyd[i * hw..(i + 1) * hw]
                .iter()
                .zip(&rec.fused[i * hw..(i + 1) * hw])
                .fold(T::zero(), |acc, (&g, &m)| acc + g * m);
            dp * cfg.activation.derivative_from_output(p[i])
        })
        .collect();
    let dbeta = da.clone();
    let mut dtheta = vec![T::zero(); subsets * channels];
    let mut dz = vec![T::zero(); channels];
    for i in 0..subsets {
        let row = params.theta_row(i);
        for c in 0..channels {
            dtheta[i * channels + c] = da[i] * cache.z[c];
            dz[c] += row[c] * da[i];
        }
    }

    // fusion path
    let mut dx = Tensor::zeros(xd);
    let dxd = dx.data_mut();
    for (i, range) in cache.partition.iter().enumerate() {
        let g = &dyd[i * hw..(i + 1) * hw];
        match rec.branches[i] {
            Branch::Max | Branch::Min => {
                let sel = &rec.selected[i * hw..(i + 1) * hw];
                for (k, (&gk, &c)) in g.iter().zip(sel).enumerate() {
                    dxd[c as usize * hw + k] += p[i] * gk;
                }
            }
            Branch::Avg => {
                let n = T::from_count(range.len());
                for c in range {
                    for (d, &gk) in dxd[c * hw..(c + 1) * hw].iter_mut().zip(g) {
                        *d += p[i] * gk / n;
                    }
                }
            }
        }
    }

    // context aggregation path: z[c] = Σ|x| / HW
    let inv_hw = T::one() / T::from_count(hw);
    for c in 0..channels {
        let scale = dz[c] * inv_hw;
        for (d, &v) in dxd[c * hw..(c + 1) * hw].iter_mut().zip(&x[c * hw..(c + 1) * hw]) {
            *d += scale * sign(v);
        }
    }

    Ok(PixGradients { dx, dtheta, dbeta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pix::{pix_forward, PixParams};
    use crate::rng::{Prng, RngSeed};
    use crate::tensor::{random_tensor, Distribution};

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let x = random_tensor::<f64>((1, 8, 3, 3), RngSeed(1), Distribution::Normal);
        let params = PixParams::xavier(8, 3, &mut Prng::new(RngSeed(2))).unwrap();
        let cfg = PixConfig::new(3);
        let (y, cache) = pix_forward(&x, &params, &cfg).unwrap();
        let g = pix_backward(&Tensor::zeros(y.dims()), &cache, &params, &cfg).unwrap();
        assert!(g.dx.data().iter().all(|&v| v == 0.0));
        assert!(g.dtheta.iter().all(|&v| v == 0.0));
        assert!(g.dbeta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gating_case_closed_form() {
        // ζ=1, θ=0, β=0: y = 0.5 x, p'(0) = 0.25, dθ = 0 route to dz = 0.
        let x = random_tensor::<f64>((1, 4, 2, 3), RngSeed(8), Distribution::Normal);
        let dy = random_tensor::<f64>((1, 4, 2, 3), RngSeed(9), Distribution::Normal);
        let params = PixParams::zeros(4, 1).unwrap();
        let cfg = PixConfig::new(1);
        let (_, cache) = pix_forward(&x, &params, &cfg).unwrap();
        let g = pix_backward(&dy, &cache, &params, &cfg).unwrap();
        for (a, b) in g.dx.data().iter().zip(dy.data()) {
            assert_eq!(*a, 0.5 * b);
        }
        for c in 0..4 {
            let dp: f64 = dy.channel(0, c).iter().zip(x.channel(0, c)).map(|(a, b)| a * b).sum();
            assert!((g.dbeta[c] - 0.25 * dp).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_mismatched_upstream() {
        let x = Tensor::<f32>::filled((1, 6, 2, 2), 1.0);
        let params = PixParams::zeros(6, 2).unwrap();
        let cfg = PixConfig::new(2);
        let (_, cache) = pix_forward(&x, &params, &cfg).unwrap();
        let bad = Tensor::zeros((1, 6, 2, 2));
        assert!(matches!(
            pix_backward(&bad, &cache, &params, &cfg),
            Err(Error::Shape { .. })
        ));
    }
}
