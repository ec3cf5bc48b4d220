use pix::nn::{
    check_model_gradients, global_avg_pool, global_avg_pool_backward, relu, relu_backward,
    softmax_cross_entropy, Arch, Conv2d, FullyConnected, ModelCheckOptions,
};
use pix::pix::gradcheck::{check_pix_gradients, relative_error, GradCheckOptions};
use pix::pix::{pix_backward, pix_forward};
use pix::tensor::{random_tensor, Distribution};
use pix::{Activation, OpMode, PixConfig, PixParams, Prng, RngSeed, Tensor};

const STEP: f64 = 1e-5;

/// Central differences of `f` around `x`, one coordinate at a time.
fn numeric_gradient(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + STEP;
            let plus = f(&probe);
            probe[i] = x[i] - STEP;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * STEP)
        })
        .collect()
}

fn worst(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic.iter().zip(numeric).map(|(&a, &n)| relative_error(a, n)).fold(0.0, f64::max)
}

fn weighted(y: &Tensor<f64>, dy: &Tensor<f64>) -> f64 {
    y.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum()
}

#[test]
fn pix_backward_over_twenty_seeds_per_configuration() {
    let configs = [
        (8, 4, 4, PixConfig::new(2)),
        (8, 4, 4, PixConfig::new(3)),
        (12, 3, 5, PixConfig::new(4).with_activation(Activation::RescaledTanh)),
        (7, 3, 3, PixConfig::new(7).with_tau(0.3)),
        (6, 4, 4, PixConfig::new(2).with_mode(OpMode::MaxOnly)),
        (6, 4, 4, PixConfig::new(3).with_mode(OpMode::AvgOnly)),
        (6, 4, 4, PixConfig::new(2).with_mode(OpMode::MinOnly)),
        (5, 2, 2, PixConfig::new(1)),
    ];
    for (c, h, w, cfg) in configs {
        let opts = GradCheckOptions::new(c, h, w, cfg);
        for seed in 0..20 {
            let report = check_pix_gradients(&opts, RngSeed(seed)).unwrap();
            assert!(report.passes(1e-5), "C={c} {cfg:?} seed {seed}: {report:?}");
        }
    }
}

#[test]
fn zero_predictor_gating_gradient_closed_form() {
    // ζ=1, θ=0, β=0: p = 1/2 everywhere, y = x/2, and the predictor path is
    // cut because θ = 0, so dx = dy/2 exactly.
    let x = random_tensor::<f64>((1, 5, 3, 3), RngSeed(4), Distribution::Normal);
    let dy = random_tensor::<f64>((1, 5, 3, 3), RngSeed(5), Distribution::Normal);
    let params = PixParams::<f64>::zeros(5, 1).unwrap();
    let cfg = PixConfig::new(1);
    let (y, cache) = pix_forward(&x, &params, &cfg).unwrap();
    assert_eq!(y, x.scale(0.5));
    let g = pix_backward(&dy, &cache, &params, &cfg).unwrap();
    assert_eq!(g.dx, dy.scale(0.5));
    // dβ_i = Σ dy_i·x_i · p(1-p) = Σ dy_i·x_i / 4
    for i in 0..5 {
        let s: f64 = dy.channel(0, i).iter().zip(x.channel(0, i)).map(|(a, b)| a * b).sum();
        assert!((g.dbeta[i] - s / 4.0).abs() < 1e-12);
    }
}

#[test]
fn conv_gradients_match_finite_differences() {
    for (seed, (stride, pad, bias)) in [(1, 0, true), (2, 1, false), (1, 1, true), (3, 2, true)].into_iter().enumerate() {
        let mut rng = Prng::new(RngSeed(seed as u64));
        let conv = Conv2d::<f64>::he_uniform(3, 4, 3, stride, pad, bias, &mut rng);
        let x = random_tensor::<f64>((2, 3, 6, 5), RngSeed(10 + seed as u64), Distribution::Normal);
        let yd = conv.output_dims(x.dims()).unwrap();
        let dy = random_tensor::<f64>(yd, RngSeed(20 + seed as u64), Distribution::Normal);
        let g = conv.backward(&x, &dy, true).unwrap();

        let num_dx = numeric_gradient(x.data(), |v| {
            weighted(&conv.forward(&Tensor::from_vec(x.dims(), v.to_vec()).unwrap()).unwrap(), &dy)
        });
        assert!(worst(g.dx.as_ref().unwrap().data(), &num_dx) <= 1e-5);

        let num_dw = numeric_gradient(&conv.weight, |v| {
            let mut c = conv.clone();
            c.weight = v.to_vec();
            weighted(&c.forward(&x).unwrap(), &dy)
        });
        assert!(worst(&g.dweight, &num_dw) <= 1e-5);

        if let Some(b) = &conv.bias {
            let num_db = numeric_gradient(b, |v| {
                let mut c = conv.clone();
                c.bias = Some(v.to_vec());
                weighted(&c.forward(&x).unwrap(), &dy)
            });
            assert!(worst(g.dbias.as_ref().unwrap(), &num_db) <= 1e-5);
        }
        assert!(conv.backward(&x, &dy, false).unwrap().dx.is_none());
    }
}

#[test]
fn dense_pool_relu_and_loss_gradients() {
    let mut rng = Prng::new(RngSeed(3));
    let fc = FullyConnected::<f64>::he_uniform(12, 5, &mut rng);
    let x = random_tensor::<f64>((3, 3, 2, 2), RngSeed(4), Distribution::Normal);
    let dy = random_tensor::<f64>((3, 5, 1, 1), RngSeed(5), Distribution::Normal);
    let g = fc.backward(&x, &dy).unwrap();
    let num = numeric_gradient(x.data(), |v| {
        weighted(&fc.forward(&Tensor::from_vec(x.dims(), v.to_vec()).unwrap()).unwrap(), &dy)
    });
    assert!(worst(g.dx.data(), &num) <= 1e-5);
    let num = numeric_gradient(&fc.weight, |v| {
        let mut f = fc.clone();
        f.weight = v.to_vec();
        weighted(&f.forward(&x).unwrap(), &dy)
    });
    assert!(worst(&g.dweight, &num) <= 1e-5);
    let num = numeric_gradient(&fc.bias, |v| {
        let mut f = fc.clone();
        f.bias = v.to_vec();
        weighted(&f.forward(&x).unwrap(), &dy)
    });
    assert!(worst(&g.dbias, &num) <= 1e-5);

    // keep every input away from the kink
    let xr = x.map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    let dyr = random_tensor::<f64>(xr.dims(), RngSeed(6), Distribution::Normal);
    let num = numeric_gradient(xr.data(), |v| weighted(&relu(&Tensor::from_vec(xr.dims(), v.to_vec()).unwrap()), &dyr));
    assert!(worst(relu_backward(&xr, &dyr).unwrap().data(), &num) <= 1e-5);

    let dyp = random_tensor::<f64>((3, 3, 1, 1), RngSeed(7), Distribution::Normal);
    let num = numeric_gradient(x.data(), |v| {
        weighted(&global_avg_pool(&Tensor::from_vec(x.dims(), v.to_vec()).unwrap()).unwrap(), &dyp)
    });
    assert!(worst(global_avg_pool_backward(x.dims(), &dyp).unwrap().data(), &num) <= 1e-5);

    let logits = random_tensor::<f64>((4, 10, 1, 1), RngSeed(8), Distribution::Normal);
    let labels = [0, 3, 9, 3];
    let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
    let num = numeric_gradient(logits.data(), |v| {
        softmax_cross_entropy(&Tensor::from_vec(logits.dims(), v.to_vec()).unwrap(), &labels).unwrap().0
    });
    let e = worst(grad.data(), &num);
    assert!(e <= 1e-5, "{e}");
}

#[test]
fn tiny_networks_end_to_end() {
    for (arch, zeta, seeds) in [(Arch::TinyPixnet, 2, 0..6u64), (Arch::TinyPixnet, 3, 0..2), (Arch::TinyBaseline, 2, 0..2)] {
        let opts = ModelCheckOptions::new(arch, PixConfig::new(zeta));
        for seed in seeds {
            let report = check_model_gradients(&opts, RngSeed(seed)).unwrap();
            assert!(report.max_error() <= 1e-4, "{arch} zeta={zeta} seed {seed}: {report:?}");
            let model: pix::nn::Model<f64> = pix::nn::build_network(arch, &opts.cfg, RngSeed(0)).unwrap();
            assert_eq!(report.checked, model.param_count());
        }
    }
}
