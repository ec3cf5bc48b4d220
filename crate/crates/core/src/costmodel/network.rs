use std::fmt;
use std::str::FromStr;

use super::spec::{LayerKind, NetworkSpec, Shape, SpecLayer};
use super::{module_flops, primitive_flops, CostReport, CostTerm, ModuleKind, PrimitiveKind};
use crate::{Error, Result};

/// How PiX is introduced into a baseline network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixMode {
    /// Every conv marked `squeeze` (together with a directly following bn
    /// and relu) becomes a PiX layer with `ζ = in/out`, so all downstream
    /// widths are preserved.
    SqueezeReplace,
    /// A PiX layer is inserted in front of every conv except the first, and
    /// that conv then consumes `⌈in/ζ⌉` channels.
    DownscaleInsert,
}

impl FromStr for PixMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squeeze" | "squeeze-replace" => Ok(PixMode::SqueezeReplace),
            "downscale" | "downscale-insert" => Ok(PixMode::DownscaleInsert),
            _ => Err(Error::Param(format!("unknown PiX mode {s:?} (squeeze or downscale)"))),
        }
    }
}

impl fmt::Display for PixMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PixMode::SqueezeReplace => "squeeze",
            PixMode::DownscaleInsert => "downscale",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixSubstitution {
    pub zeta: u64,
    pub mode: PixMode,
}

impl NetworkSpec {
    /// Returns a copy of the network with PiX substituted per `sub`.
    pub fn with_pix(&self, sub: PixSubstitution) -> Result<NetworkSpec> {
        if sub.zeta < 1 {
            return Err(Error::Param("zeta must be at least 1".into()));
        }
        let layers = match sub.mode {
            PixMode::SqueezeReplace => {
                let mut max_ratio = 0;
                let layers = squeeze_replace(&self.layers, &mut max_ratio)?;
                if max_ratio == 0 {
                    return Err(Error::Param(format!(
                        "network {} has no conv marked `squeeze`",
                        self.name
                    )));
                }
                if max_ratio != sub.zeta {
                    return Err(Error::Param(format!(
                        "network {} squeezes channels by {max_ratio}, not zeta={}",
                        self.name, sub.zeta
                    )));
                }
                layers
            }
            PixMode::DownscaleInsert => {
                let mut seen_conv = false;
                downscale_insert(&self.layers, sub.zeta, &mut seen_conv)
            }
        };
        let spec = NetworkSpec {
            name: format!("{}+pix[{} zeta={}]", self.name, sub.mode, sub.zeta),
            input: self.input,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn squeeze_replace(layers: &[SpecLayer], max_ratio: &mut u64) -> Result<Vec<SpecLayer>> {
    let mut out = Vec::with_capacity(layers.len());
    let mut i = 0;
    while i < layers.len() {
        let layer = &layers[i];
        match &layer.kind {
            LayerKind::Conv { in_ch, out_ch, kernel, stride, squeeze: true, .. } => {
                if *kernel != 1 || *stride != 1 || in_ch % out_ch != 0 {
                    return Err(Error::Validation {
                        layer: layer.describe(),
                        msg: "a squeeze conv must be 1x1, stride 1, with out dividing in".into(),
                    });
                }
                let zeta = in_ch / out_ch;
                *max_ratio = (*max_ratio).max(zeta);
                out.push(SpecLayer {
                    line: layer.line,
                    kind: LayerKind::Pix { zeta },
                });
                i += 1;
                if matches!(layers.get(i).map(|l| &l.kind), Some(LayerKind::BatchNorm)) {
                    i += 1;
                }
                if matches!(layers.get(i).map(|l| &l.kind), Some(LayerKind::Relu)) {
                    i += 1;
                }
                continue;
            }
            LayerKind::Residual { main, shortcut } => out.push(SpecLayer {
                line: layer.line,
                kind: LayerKind::Residual {
                    main: squeeze_replace(main, max_ratio)?,
                    shortcut: squeeze_replace(shortcut, max_ratio)?,
                },
            }),
            _ => out.push(layer.clone()),
        }
        i += 1;
    }
    Ok(out)
}

fn downscale_insert(layers: &[SpecLayer], zeta: u64, seen_conv: &mut bool) -> Vec<SpecLayer> {
    let mut out = Vec::with_capacity(layers.len() * 2);
    for layer in layers {
        match &layer.kind {
            LayerKind::Conv { in_ch, out_ch, kernel, stride, pad, bias, squeeze } => {
                if !*seen_conv {
                    *seen_conv = true;
                    out.push(layer.clone());
                    continue;
                }
                out.push(SpecLayer {
                    line: 0,
                    kind: LayerKind::Pix { zeta },
                });
                out.push(SpecLayer {
                    line: layer.line,
                    kind: LayerKind::Conv {
                        in_ch: in_ch.div_ceil(zeta),
                        out_ch: *out_ch,
                        kernel: *kernel,
                        stride: *stride,
                        pad: *pad,
                        bias: *bias,
                        squeeze: *squeeze,
                    },
                });
            }
            LayerKind::Residual { main, shortcut } => {
                // the shortcut sees the block input, so it is visited with the
                // same "seen" state as the main path
                let mut seen_short = *seen_conv;
                let main = downscale_insert(main, zeta, seen_conv);
                let shortcut = downscale_insert(shortcut, zeta, &mut seen_short);
                out.push(SpecLayer {
                    line: layer.line,
                    kind: LayerKind::Residual { main, shortcut },
                });
            }
            _ => out.push(layer.clone()),
        }
    }
    out
}

const CATEGORIES: [&str; 8] = [
    "conv",
    "batchnorm",
    "relu",
    "pool",
    "global_pool",
    "fc",
    "pix",
    "residual_add",
];

#[derive(Default)]
struct Tally {
    flops: [u64; CATEGORIES.len()],
    params: u64,
}

impl Tally {
    fn add(&mut self, category: &str, flops: u64) {
        let i = CATEGORIES.iter().position(|c| *c == category).unwrap();
        self.flops[i] += flops;
    }
}

fn tally(layers: &[SpecLayer], mut shape: Shape, t: &mut Tally) -> Result<Shape> {
    for layer in layers {
        let out = layer.output_shape(shape)?;
        match &layer.kind {
            LayerKind::Conv { in_ch, out_ch, kernel, bias, .. } => {
                t.add(
                    "conv",
                    primitive_flops(PrimitiveKind::Conv {
                        kernels: *out_ch,
                        in_channels: *in_ch,
                        k: *kernel,
                        height: out.h,
                        width: out.w,
                    }),
                );
                t.params += in_ch * out_ch * kernel * kernel + if *bias { *out_ch } else { 0 };
            }
            LayerKind::BatchNorm => {
                t.add(
                    "batchnorm",
                    primitive_flops(PrimitiveKind::BatchNorm { c: shape.c, h: shape.h, w: shape.w }),
                );
                t.params += 2 * shape.c;
            }
            LayerKind::Relu => t.add(
                "relu",
                primitive_flops(PrimitiveKind::Relu { c: shape.c, h: shape.h, w: shape.w }),
            ),
            LayerKind::MaxPool { kernel, .. } | LayerKind::AvgPool { kernel, .. } => {
                t.add("pool", out.c * out.h * out.w * kernel * kernel)
            }
            LayerKind::GlobalPool => t.add(
                "global_pool",
                primitive_flops(PrimitiveKind::GlobalPool { c: shape.c, h: shape.h, w: shape.w }),
            ),
            LayerKind::Fc { in_features, out_features, bias } => {
                t.add("fc", in_features * out_features);
                t.params += in_features * out_features + if *bias { *out_features } else { 0 };
            }
            LayerKind::Pix { zeta } => {
                let m = module_flops(ModuleKind::Pix { zeta: *zeta }, shape.c, shape.h, shape.w)?;
                t.add("pix", m.total_flops);
                t.params += out.c * shape.c + out.c;
            }
            LayerKind::Residual { main, shortcut } => {
                tally(main, shape, t)?;
                tally(shortcut, shape, t)?;
                t.add("residual_add", out.c * out.h * out.w);
            }
        }
        shape = out;
    }
    Ok(shape)
}

fn resolve(spec: &NetworkSpec, pix: Option<PixSubstitution>) -> Result<Tally> {
    let mut t = Tally::default();
    match pix {
        Some(sub) => tally(&spec.with_pix(sub)?.layers, spec.input, &mut t)?,
        None => tally(&spec.layers, spec.input, &mut t)?,
    };
    Ok(t)
}

/// Total FLOPs, broken down by layer category.
pub fn network_flops(spec: &NetworkSpec, pix: Option<PixSubstitution>) -> Result<CostReport> {
    let t = resolve(spec, pix)?;
    let terms = CATEGORIES
        .iter()
        .zip(t.flops)
        .filter(|(_, f)| *f > 0)
        .map(|(c, f)| CostTerm::flops(*c, f))
        .collect();
    Ok(CostReport::from_terms(terms))
}

/// Learnable scalars: conv/fc weights and optional biases, batchnorm scale
/// and shift, PiX `θ` and `β`.
pub fn network_params(spec: &NetworkSpec, pix: Option<PixSubstitution>) -> Result<u64> {
    Ok(resolve(spec, pix)?.params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn squeeze(zeta: u64) -> Option<PixSubstitution> {
        Some(PixSubstitution { zeta, mode: PixMode::SqueezeReplace })
    }

    #[test]
    fn single_conv_params() {
        let spec = NetworkSpec::parse("input 64 8 8\nconv 64 64 k=3 p=1\n").unwrap();
        assert_eq!(network_params(&spec, None).unwrap(), 36_864);
        let flops = network_flops(&spec, None).unwrap();
        assert_eq!(flops.total_flops, 8 * 8 * 64 * 64 * 9);
    }

    #[test]
    fn squeeze_replace_swaps_conv_bn_relu_for_pix() {
        let text = "input 16 4 4\nresidual\nconv 16 4 k=1 squeeze\nbn\nrelu\nconv 4 16 k=1\nend\n";
        let spec = NetworkSpec::parse(text).unwrap();
        let base = network_flops(&spec, None).unwrap().total_flops;
        // conv 16*4*16 + bn 4*4*16 + relu 4*16 + conv 4*16*16 + add 16*16
        assert_eq!(base, 1024 + 256 + 64 + 1024 + 256);
        let pix = network_flops(&spec, squeeze(4)).unwrap().total_flops;
        let module = module_flops(ModuleKind::Pix { zeta: 4 }, 16, 4, 4).unwrap().total_flops;
        assert_eq!(pix, module + 1024 + 256);
        // θ replaces the conv kernel bank of identical shape
        let replaced = spec.with_pix(squeeze(4).unwrap()).unwrap();
        match &replaced.layers[0].kind {
            LayerKind::Residual { main, .. } => {
                assert_eq!(main[0].kind, LayerKind::Pix { zeta: 4 });
                assert_eq!(main.len(), 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn squeeze_zeta_must_match_network() {
        let text = "input 16 4 4\nconv 16 4 k=1 squeeze\n";
        let spec = NetworkSpec::parse(text).unwrap();
        assert!(matches!(network_flops(&spec, squeeze(2)), Err(Error::Param(_))));
        let plain = NetworkSpec::parse("input 16 4 4\nconv 16 4 k=1\n").unwrap();
        assert!(network_flops(&plain, squeeze(4)).is_err());
    }

    #[test]
    fn downscale_shrinks_conv_inputs() {
        let text = "input 3 8 8\nconv 3 32 k=3 p=1\nrelu\nconv 32 32 k=3 p=1\nrelu\ngpool\nfc 32 10\n";
        let spec = NetworkSpec::parse(text).unwrap();
        let sub = PixSubstitution { zeta: 2, mode: PixMode::DownscaleInsert };
        let down = spec.with_pix(sub).unwrap();
        assert_eq!(down.layers.len(), spec.layers.len() + 1);
        assert!(matches!(down.layers[2].kind, LayerKind::Pix { zeta: 2 }));
        assert!(matches!(down.layers[3].kind, LayerKind::Conv { in_ch: 16, .. }));
        let base = network_params(&spec, None).unwrap();
        let pix = network_params(&spec, Some(sub)).unwrap();
        assert_eq!(base - pix, 16 * 32 * 9 - (16 * 32 + 16));
    }

    #[test]
    fn bundled_resnet50_shape_of_costs() {
        let spec = NetworkSpec::bundled("resnet50").unwrap();
        let params = network_params(&spec, None).unwrap();
        assert_eq!(params, 25_557_032);
        let report = network_flops(&spec, None).unwrap();
        assert_eq!(report.total_flops, report.breakdown.iter().map(|t| t.flops).sum::<u64>());
    }

    #[test]
    fn bundled_vgg16_params() {
        let spec = NetworkSpec::bundled("vgg16").unwrap();
        assert_eq!(network_params(&spec, None).unwrap(), 138_357_544);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("squeeze".parse::<PixMode>().unwrap(), PixMode::SqueezeReplace);
        assert_eq!("downscale".parse::<PixMode>().unwrap(), PixMode::DownscaleInsert);
        assert!("replace".parse::<PixMode>().is_err());
    }
}
