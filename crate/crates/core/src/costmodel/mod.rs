//! Analytic FLOP and memory accounting.
//!
//! FLOPs follow the fused-multiply-add convention: one multiply-accumulate is
//! one FLOP. Memory is counted in tensor elements and converted at 4 bytes
//! per element (FP32); megabytes are decimal (10⁶ bytes).
//!
//! Module formulas generalise to channel counts that are not multiples of the
//! reduction: the SE/CBAM squeeze width is `⌈C/16⌉` and the PiX subset count
//! is `⌈C/ζ⌉`. When the division is exact they coincide with the textbook
//! closed forms, e.g. `2CHW + C²/8 + 65C/16` for SE.

mod network;
mod spec;

use std::fmt;

use crate::{Error, Result};

pub use network::{network_flops, network_params, PixMode, PixSubstitution};
pub use spec::{LayerKind, NetworkSpec, Shape, SpecLayer, BUNDLED_NETWORKS};

pub const BYTES_PER_ELEMENT: u64 = 4;

/// SE/CBAM bottleneck reduction ratio.
const SE_REDUCTION: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimitiveKind {
    /// `kernels` filters of size `in_channels × k × k`, evaluated over an
    /// `height × width` output grid.
    Conv {
        kernels: u64,
        in_channels: u64,
        k: u64,
        height: u64,
        width: u64,
    },
    BatchNorm { c: u64, h: u64, w: u64 },
    Relu { c: u64, h: u64, w: u64 },
    Sigmoid { c: u64, h: u64, w: u64 },
    GlobalPool { c: u64, h: u64, w: u64 },
    ChannelSampling { c: u64, h: u64, w: u64, zeta: u64 },
}

pub fn primitive_flops(p: PrimitiveKind) -> u64 {
    match p {
        PrimitiveKind::Conv {
            kernels,
            in_channels,
            k,
            height,
            width,
        } => height * width * kernels * in_channels * k * k,
        PrimitiveKind::BatchNorm { c, h, w } => 4 * c * h * w,
        PrimitiveKind::Relu { c, h, w } => c * h * w,
        PrimitiveKind::Sigmoid { c, h, w } => 4 * c * h * w,
        PrimitiveKind::GlobalPool { c, h, w } => c * h * w,
        // (size - 1) comparisons per pixel for every subset; the subsets
        // cover all C channels, so this is (C - ⌈C/ζ⌉)·H·W.
        PrimitiveKind::ChannelSampling { c, h, w, zeta } => {
            let subsets = c.div_ceil(zeta.max(1));
            (c - subsets) * h * w
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModuleKind {
    Se,
    Cbam,
    /// Feature boosting and suppression keeping the `k` strongest channels.
    Fbs { k: u64 },
    Pix { zeta: u64 },
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModuleKind::Se => f.write_str("SE"),
            ModuleKind::Cbam => f.write_str("CBAM"),
            ModuleKind::Fbs { k } => write!(f, "FBS(k={k})"),
            ModuleKind::Pix { zeta } => write!(f, "PiX(zeta={zeta})"),
        }
    }
}

impl ModuleKind {
    fn validate(&self, c: u64, h: u64, w: u64) -> Result<()> {
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Param(format!(
                "module dims must be positive, got {c}x{h}x{w}"
            )));
        }
        match *self {
            ModuleKind::Fbs { k } if k < 1 || k > c => {
                Err(Error::Param(format!("FBS top-k={k} must lie in [1, {c}]")))
            }
            ModuleKind::Pix { zeta } if zeta < 1 || zeta > c => {
                Err(Error::Param(format!("PiX zeta={zeta} must lie in [1, {c}]")))
            }
            _ => Ok(()),
        }
    }

    /// FLOP total written directly as a polynomial in `C, H, W`.
    pub fn closed_form_flops(&self, c: u64, h: u64, w: u64) -> u64 {
        let chw = c * h * w;
        let hw = h * w;
        let r = c.div_ceil(SE_REDUCTION);
        match *self {
            ModuleKind::Se => 2 * chw + 2 * r * c + r + 4 * c,
            ModuleKind::Cbam => 6 * chw + 2 * r * c + r + 5 * c + 6 * hw,
            ModuleKind::Fbs { k } => 7 * chw + c * c + 4 * c + k * c - k * (k + 1) / 2,
            ModuleKind::Pix { zeta } => {
                let s = c.div_ceil(zeta);
                chw + s * c + 4 * s + (c - s) * hw
            }
        }
    }

    /// Memory total (elements) written directly as a polynomial in `C, H, W`.
    pub fn closed_form_memory(&self, c: u64, h: u64, w: u64) -> u64 {
        let chw = c * h * w;
        let r = c.div_ceil(SE_REDUCTION);
        match *self {
            ModuleKind::Se => chw + 2 * c + r,
            ModuleKind::Cbam => 2 * chw + 5 * h * w + 4 * c + r,
            ModuleKind::Fbs { .. } => 2 * chw + 2 * c,
            ModuleKind::Pix { zeta } => chw + c + c.div_ceil(zeta),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostTerm {
    pub label: String,
    pub flops: u64,
    pub elements: u64,
}

impl CostTerm {
    pub fn flops(label: impl Into<String>, flops: u64) -> Self {
        CostTerm {
            label: label.into(),
            flops,
            elements: 0,
        }
    }

    pub fn memory(label: impl Into<String>, elements: u64) -> Self {
        CostTerm {
            label: label.into(),
            flops: 0,
            elements,
        }
    }

    pub fn bytes(&self) -> u64 {
        self.elements * BYTES_PER_ELEMENT
    }
}

/// FLOP and memory totals with the terms they were summed from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CostReport {
    pub total_flops: u64,
    pub total_memory_elements: u64,
    pub breakdown: Vec<CostTerm>,
}

impl CostReport {
    pub fn from_terms(breakdown: Vec<CostTerm>) -> Self {
        CostReport {
            total_flops: breakdown.iter().map(|t| t.flops).sum(),
            total_memory_elements: breakdown.iter().map(|t| t.elements).sum(),
            breakdown,
        }
    }

    pub fn memory_bytes(&self) -> u64 {
        self.total_memory_elements * BYTES_PER_ELEMENT
    }

    pub fn megabytes(&self) -> f64 {
        self.memory_bytes() as f64 / 1e6
    }

    /// Exact decimal rendering of the byte count in MB with six decimals.
    pub fn megabytes_string(&self) -> String {
        format_megabytes(self.memory_bytes())
    }

    /// Concatenates the breakdowns of two reports.
    pub fn merge(mut self, other: CostReport) -> CostReport {
        self.breakdown.extend(other.breakdown);
        CostReport::from_terms(self.breakdown)
    }
}

pub fn format_megabytes(bytes: u64) -> String {
    format!("{}.{:06}", bytes / 1_000_000, bytes % 1_000_000)
}

pub fn module_flops(m: ModuleKind, c: u64, h: u64, w: u64) -> Result<CostReport> {
    m.validate(c, h, w)?;
    let chw = c * h * w;
    let hw = h * w;
    let r = c.div_ceil(SE_REDUCTION);
    let f = CostTerm::flops;
    let terms = match m {
        ModuleKind::Se => vec![
            f("global_pool", primitive_flops(PrimitiveKind::GlobalPool { c, h, w })),
            f("conv_squeeze", r * c),
            f("relu", r),
            f("conv_expand", c * r),
            f("sigmoid", primitive_flops(PrimitiveKind::Sigmoid { c, h: 1, w: 1 })),
            f("broadcast_multiply", chw),
        ],
        ModuleKind::Cbam => vec![
            f("global_max_pool", chw),
            f("global_avg_pool", chw),
            f("conv_squeeze", r * c),
            f("relu", r),
            f("conv_expand", c * r),
            f("sigmoid", 4 * c),
            f("sum", c),
            f("broadcast_multiply", chw),
            f("channel_max_pool", (c - 1) * hw),
            f("channel_avg_pool", (c - 1) * hw),
            f("concat", 2 * hw),
            f("spatial_conv", 2 * hw),
            f("spatial_sigmoid", 4 * hw),
            f("spatial_broadcast_multiply", chw),
        ],
        ModuleKind::Fbs { k } => vec![
            f("global_pool", chw),
            f("conv_squeeze", c * c),
            f("sigmoid", 4 * c),
            f("top_k", (1..=k).map(|i| c - i).sum()),
            f("batchnorm", primitive_flops(PrimitiveKind::BatchNorm { c, h, w })),
            f("broadcast_multiply", chw),
            f("relu", primitive_flops(PrimitiveKind::Relu { c, h, w })),
        ],
        ModuleKind::Pix { zeta } => {
            let s = c.div_ceil(zeta);
            vec![
                f("global_pool", primitive_flops(PrimitiveKind::GlobalPool { c, h, w })),
                f(
                    "conv_squeeze",
                    primitive_flops(PrimitiveKind::Conv {
                        kernels: s,
                        in_channels: c,
                        k: 1,
                        height: 1,
                        width: 1,
                    }),
                ),
                f("sigmoid", primitive_flops(PrimitiveKind::Sigmoid { c: s, h: 1, w: 1 })),
                f(
                    "channel_fusion",
                    primitive_flops(PrimitiveKind::ChannelSampling { c, h, w, zeta }),
                ),
            ]
        }
    };
    Ok(CostReport::from_terms(terms))
}

pub fn module_memory(m: ModuleKind, c: u64, h: u64, w: u64) -> Result<CostReport> {
    m.validate(c, h, w)?;
    let chw = c * h * w;
    let hw = h * w;
    let r = c.div_ceil(SE_REDUCTION);
    let e = CostTerm::memory;
    let terms = match m {
        ModuleKind::Se => vec![
            e("global_pool", c),
            e("conv_squeeze", r),
            e("conv_expand", c),
            e("broadcast_multiply", chw),
        ],
        ModuleKind::Cbam => vec![
            e("global_max_pool", c),
            e("global_avg_pool", c),
            e("conv_squeeze", r),
            e("conv_expand", c),
            e("sum", c),
            e("broadcast_multiply", chw),
            e("channel_max_pool", hw),
            e("channel_avg_pool", hw),
            e("concat", 2 * hw),
            e("spatial_conv", hw),
            e("spatial_broadcast_multiply", chw),
        ],
        ModuleKind::Fbs { .. } => vec![
            e("global_pool", c),
            e("conv_squeeze", c),
            e("top_k", chw),
            e("broadcast_multiply", chw),
        ],
        // The fused output is budgeted at the full C·H·W, as in the
        // published accounting.
        ModuleKind::Pix { zeta } => vec![
            e("global_pool", c),
            e("conv_squeeze", c.div_ceil(zeta)),
            e("channel_fusion", chw),
        ],
    };
    Ok(CostReport::from_terms(terms))
}

/// FLOP terms followed by memory terms for one module instance.
pub fn module_cost(m: ModuleKind, c: u64, h: u64, w: u64) -> Result<CostReport> {
    Ok(module_flops(m, c, h, w)?.merge(module_memory(m, c, h, w)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example_components() {
        let conv = PrimitiveKind::Conv {
            kernels: 3,
            in_channels: 12,
            k: 1,
            height: 5,
            width: 5,
        };
        assert_eq!(primitive_flops(conv), 900);
        assert_eq!(primitive_flops(PrimitiveKind::BatchNorm { c: 3, h: 5, w: 5 }), 300);
        assert_eq!(primitive_flops(PrimitiveKind::Relu { c: 3, h: 5, w: 5 }), 75);
        assert_eq!(
            primitive_flops(PrimitiveKind::ChannelSampling { c: 12, h: 5, w: 5, zeta: 4 }),
            225
        );
        let pix = module_flops(ModuleKind::Pix { zeta: 4 }, 12, 5, 5).unwrap();
        let parts: Vec<u64> = pix.breakdown.iter().map(|t| t.flops).collect();
        assert_eq!(parts, vec![300, 36, 12, 225]);
        assert_eq!(pix.total_flops, 573);
    }

    #[test]
    fn sampling_with_ragged_last_subset() {
        // C=10, ζ=4: subsets of 4,4,2 → 3+3+1 comparisons per pixel.
        let f = primitive_flops(PrimitiveKind::ChannelSampling { c: 10, h: 2, w: 3, zeta: 4 });
        assert_eq!(f, 7 * 6);
    }

    #[test]
    fn table_totals() {
        let se = module_flops(ModuleKind::Se, 512, 112, 112).unwrap();
        assert_eq!(se.total_flops, 12_879_904);
        let pix = module_flops(ModuleKind::Pix { zeta: 1 }, 512, 112, 112).unwrap();
        assert_eq!(pix.total_flops, 6_686_720);
        let cbam = module_flops(ModuleKind::Cbam, 512, 112, 112).unwrap();
        assert_eq!(cbam.total_flops, 38_645_792);

        let mem = module_memory(ModuleKind::Pix { zeta: 1 }, 512, 112, 112).unwrap();
        assert_eq!(mem.total_memory_elements, 6_422_528 + 1_024);
        assert_eq!(mem.megabytes_string(), "25.694208");
        let mem = module_memory(ModuleKind::Se, 512, 112, 112).unwrap();
        assert_eq!(mem.megabytes_string(), "25.694336");
        let mem = module_memory(ModuleKind::Fbs { k: 1 }, 512, 56, 56).unwrap();
        assert_eq!(mem.megabytes_string(), "12.849152");
    }

    #[test]
    fn pix_at_unit_zeta() {
        for (c, h, w) in [(1, 1, 1), (7, 3, 5), (64, 8, 8), (512, 28, 28)] {
            let r = module_flops(ModuleKind::Pix { zeta: 1 }, c, h, w).unwrap();
            assert_eq!(r.total_flops, c * h * w + c * c + 4 * c);
        }
    }

    #[test]
    fn invalid_module_params() {
        assert!(module_flops(ModuleKind::Pix { zeta: 0 }, 8, 2, 2).is_err());
        assert!(module_flops(ModuleKind::Pix { zeta: 9 }, 8, 2, 2).is_err());
        assert!(module_flops(ModuleKind::Fbs { k: 0 }, 8, 2, 2).is_err());
        assert!(module_memory(ModuleKind::Se, 0, 2, 2).is_err());
    }

    #[test]
    fn megabyte_formatting_is_exact() {
        assert_eq!(format_megabytes(25_694_208), "25.694208");
        assert_eq!(format_megabytes(1_000), "0.001000");
    }

    fn module_strategy() -> impl Strategy<Value = (ModuleKind, u64, u64, u64)> {
        (1u64..600, 1u64..64, 1u64..64, 0u8..4, 1u64..600).prop_map(|(c, h, w, kind, param)| {
            let m = match kind {
                0 => ModuleKind::Se,
                1 => ModuleKind::Cbam,
                2 => ModuleKind::Fbs { k: 1 + param % c },
                _ => ModuleKind::Pix { zeta: 1 + param % c },
            };
            (m, c, h, w)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn breakdown_matches_closed_form((m, c, h, w) in module_strategy()) {
            let f = module_flops(m, c, h, w).unwrap();
            prop_assert_eq!(f.total_flops, f.breakdown.iter().map(|t| t.flops).sum::<u64>());
            prop_assert_eq!(f.total_flops, m.closed_form_flops(c, h, w));
            let mem = module_memory(m, c, h, w).unwrap();
            prop_assert_eq!(mem.total_memory_elements, m.closed_form_memory(c, h, w));
            prop_assert_eq!(mem.memory_bytes(), 4 * mem.total_memory_elements);
        }

        #[test]
        fn monotone_in_dims((m, c, h, w) in module_strategy()) {
            let base_f = module_flops(m, c, h, w).unwrap().total_flops;
            let base_m = module_memory(m, c, h, w).unwrap().total_memory_elements;
            for (c2, h2, w2) in [(c + 1, h, w), (c, h + 1, w), (c, h, w + 1)] {
                prop_assert!(module_flops(m, c2, h2, w2).unwrap().total_flops >= base_f);
                prop_assert!(module_memory(m, c2, h2, w2).unwrap().total_memory_elements >= base_m);
            }
        }
    }
}
