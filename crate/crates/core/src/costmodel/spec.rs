//! Declarative network descriptions.
//!
//! A spec file is line oriented. `#` starts a comment; indentation is
//! ignored. Channel counts are explicit on every conv/fc line so that a
//! broken chain is reported at the offending layer.
//!
//! ```text
//! name   resnet50
//! input  3 224 224                  # C H W
//! conv   3 64 k=7 s=2 p=3 [bias]    # in out, kernel, stride, padding
//! bn
//! relu
//! maxpool k=3 s=2 p=1               # also: avgpool
//! residual                          # main path until `shortcut`/`end`
//!   conv 64 64 k=1 squeeze          # squeeze: channel-squeezing 1x1 conv
//!   ...
//! shortcut                          # optional projection; identity if absent
//!   conv 64 256 k=1
//!   bn
//! end                               # element-wise add of the two paths
//! gpool                             # global average pool
//! fc     2048 1000 [bias]
//! pix    zeta=2                     # explicit PiX layer
//! ```

use std::fmt;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

/// Spec files shipped with the crate, by name.
pub const BUNDLED_NETWORKS: &[(&str, &str)] = &[
    ("resnet18", include_str!("../../networks/resnet18.net")),
    ("resnet50", include_str!("../../networks/resnet50.net")),
    ("resnet101", include_str!("../../networks/resnet101.net")),
    ("resnet152", include_str!("../../networks/resnet152.net")),
    ("vgg16", include_str!("../../networks/vgg16.net")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub c: u64,
    pub h: u64,
    pub w: u64,
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        in_ch: u64,
        out_ch: u64,
        kernel: u64,
        stride: u64,
        pad: u64,
        bias: bool,
        squeeze: bool,
    },
    BatchNorm,
    Relu,
    MaxPool { kernel: u64, stride: u64, pad: u64 },
    AvgPool { kernel: u64, stride: u64, pad: u64 },
    GlobalPool,
    Fc { in_features: u64, out_features: u64, bias: bool },
    Pix { zeta: u64 },
    Residual { main: Vec<SpecLayer>, shortcut: Vec<SpecLayer> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecLayer {
    /// 1-based source line, 0 for synthesised layers.
    pub line: usize,
    pub kind: LayerKind,
}

impl SpecLayer {
    pub fn describe(&self) -> String {
        let what = match &self.kind {
            LayerKind::Conv { in_ch, out_ch, kernel, .. } => {
                format!("conv {in_ch}->{out_ch} k={kernel}")
            }
            LayerKind::BatchNorm => "bn".into(),
            LayerKind::Relu => "relu".into(),
            LayerKind::MaxPool { kernel, .. } => format!("maxpool k={kernel}"),
            LayerKind::AvgPool { kernel, .. } => format!("avgpool k={kernel}"),
            LayerKind::GlobalPool => "gpool".into(),
            LayerKind::Fc { in_features, out_features, .. } => {
                format!("fc {in_features}->{out_features}")
            }
            LayerKind::Pix { zeta } => format!("pix zeta={zeta}"),
            LayerKind::Residual { .. } => "residual".into(),
        };
        if self.line > 0 {
            format!("line {} ({what})", self.line)
        } else {
            format!("inserted {what}")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub name: String,
    pub input: Shape,
    pub layers: Vec<SpecLayer>,
}

struct LineParser<'a> {
    line: usize,
    args: Vec<&'a str>,
}

impl<'a> LineParser<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn positional(&self, count: usize) -> Result<Vec<u64>> {
        let pos: Vec<&str> = self.args.iter().copied().filter(|a| !a.contains('=')).collect();
        let numeric: Vec<&str> = pos.iter().copied().filter(|a| a.parse::<u64>().is_ok()).collect();
        if numeric.len() != count {
            return Err(self.err(format!("expected {count} numeric arguments, found {}", numeric.len())));
        }
        Ok(numeric.iter().map(|a| a.parse().unwrap()).collect())
    }

    fn key(&self, key: &str, default: Option<u64>) -> Result<u64> {
        for a in &self.args {
            if let Some((k, v)) = a.split_once('=') {
                if k == key {
                    return v
                        .parse()
                        .map_err(|_| self.err(format!("{key}={v} is not a non-negative integer")));
                }
            }
        }
        default.ok_or_else(|| self.err(format!("missing {key}=")))
    }

    fn flag(&self, name: &str) -> bool {
        self.args.contains(&name)
    }

    fn check_known(&self, keys: &[&str], flags: &[&str]) -> Result<()> {
        for a in &self.args {
            match a.split_once('=') {
                Some((k, _)) if !keys.contains(&k) => {
                    return Err(self.err(format!("unknown option {k}=")));
                }
                None if a.parse::<u64>().is_err() && !flags.contains(a) => {
                    return Err(self.err(format!("unexpected token {a:?}")));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

enum Section {
    Main,
    Shortcut,
}

impl NetworkSpec {
    pub fn parse(text: &str) -> Result<NetworkSpec> {
        let mut name = String::from("network");
        let mut input = None;
        let mut layers = Vec::new();
        // (line of `residual`, main, shortcut, current section)
        let mut open: Option<(usize, Vec<SpecLayer>, Vec<SpecLayer>, Section)> = None;

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut tokens = content.split_whitespace();
            let keyword = tokens.next().unwrap();
            let p = LineParser {
                line,
                args: tokens.collect(),
            };
            let kind = match keyword {
                "name" => {
                    name = p.args.join(" ");
                    continue;
                }
                "input" => {
                    p.check_known(&[], &[])?;
                    let v = p.positional(3)?;
                    input = Some(Shape { c: v[0], h: v[1], w: v[2] });
                    continue;
                }
                "residual" => {
                    if open.is_some() {
                        return Err(p.err("nested residual blocks are not supported"));
                    }
                    open = Some((line, Vec::new(), Vec::new(), Section::Main));
                    continue;
                }
                "shortcut" => {
                    match open.as_mut() {
                        Some((_, _, _, sec @ Section::Main)) => *sec = Section::Shortcut,
                        Some(_) => return Err(p.err("duplicate shortcut section")),
                        None => return Err(p.err("shortcut outside a residual block")),
                    }
                    continue;
                }
                "end" => {
                    let (start, main, shortcut, _) =
                        open.take().ok_or_else(|| p.err("end without residual"))?;
                    if main.is_empty() {
                        return Err(p.err("residual block has an empty main path"));
                    }
                    layers.push(SpecLayer {
                        line: start,
                        kind: LayerKind::Residual { main, shortcut },
                    });
                    continue;
                }
                "conv" => {
                    p.check_known(&["k", "s", "p"], &["bias", "squeeze"])?;
                    let v = p.positional(2)?;
                    LayerKind::Conv {
                        in_ch: v[0],
                        out_ch: v[1],
                        kernel: p.key("k", None)?,
                        stride: p.key("s", Some(1))?,
                        pad: p.key("p", Some(0))?,
                        bias: p.flag("bias"),
                        squeeze: p.flag("squeeze"),
                    }
                }
                "bn" => LayerKind::BatchNorm,
                "relu" => LayerKind::Relu,
                "gpool" => LayerKind::GlobalPool,
                "maxpool" | "avgpool" => {
                    p.check_known(&["k", "s", "p"], &[])?;
                    let kernel = p.key("k", None)?;
                    let stride = p.key("s", Some(kernel))?;
                    let pad = p.key("p", Some(0))?;
                    if keyword == "maxpool" {
                        LayerKind::MaxPool { kernel, stride, pad }
                    } else {
                        LayerKind::AvgPool { kernel, stride, pad }
                    }
                }
                "fc" => {
                    p.check_known(&[], &["bias"])?;
                    let v = p.positional(2)?;
                    LayerKind::Fc {
                        in_features: v[0],
                        out_features: v[1],
                        bias: p.flag("bias"),
                    }
                }
                "pix" => {
                    p.check_known(&["zeta"], &[])?;
                    LayerKind::Pix { zeta: p.key("zeta", None)? }
                }
                other => return Err(p.err(format!("unknown layer type {other:?}"))),
            };
            if matches!(kind, LayerKind::BatchNorm | LayerKind::Relu | LayerKind::GlobalPool)
                && !p.args.is_empty()
            {
                return Err(p.err(format!("{keyword} takes no arguments")));
            }
            let layer = SpecLayer { line, kind };
            match open.as_mut() {
                Some((_, main, _, Section::Main)) => main.push(layer),
                Some((_, _, shortcut, Section::Shortcut)) => shortcut.push(layer),
                None => layers.push(layer),
            }
        }
        if let Some((start, ..)) = open {
            return Err(Error::Parse {
                line: start,
                msg: "residual block is never closed with `end`".into(),
            });
        }
        let input = input.ok_or(Error::Parse {
            line: 0,
            msg: "missing `input C H W` line".into(),
        })?;
        let spec = NetworkSpec { name, input, layers };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<NetworkSpec> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        NetworkSpec::parse(&text)
    }

    pub fn bundled(name: &str) -> Result<NetworkSpec> {
        let text = BUNDLED_NETWORKS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| {
                let known: Vec<&str> = BUNDLED_NETWORKS.iter().map(|(n, _)| *n).collect();
                Error::Param(format!("no bundled network {name:?} (have {})", known.join(", ")))
            })?;
        NetworkSpec::parse(text)
    }

    /// Walks the layers checking that shapes chain; returns the output shape.
    pub fn validate(&self) -> Result<Shape> {
        let mut shape = self.input;
        for layer in &self.layers {
            shape = layer.output_shape(shape)?;
        }
        Ok(shape)
    }
}

fn window(extent: u64, kernel: u64, stride: u64, pad: u64) -> Option<u64> {
    if stride == 0 || kernel == 0 || extent + 2 * pad < kernel {
        return None;
    }
    Some((extent + 2 * pad - kernel) / stride + 1)
}

impl SpecLayer {
    fn invalid(&self, msg: impl Into<String>) -> Error {
        Error::Validation {
            layer: self.describe(),
            msg: msg.into(),
        }
    }

    /// Output shape for `input`, or a validation error naming this layer.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match &self.kind {
            LayerKind::Conv { in_ch, out_ch, kernel, stride, pad, .. } => {
                if *in_ch != input.c {
                    return Err(self.invalid(format!(
                        "expects {in_ch} input channels but receives {input}"
                    )));
                }
                if *out_ch == 0 {
                    return Err(self.invalid("zero output channels"));
                }
                let h = window(input.h, *kernel, *stride, *pad);
                let w = window(input.w, *kernel, *stride, *pad);
                match (h, w) {
                    (Some(h), Some(w)) => Ok(Shape { c: *out_ch, h, w }),
                    _ => Err(self.invalid(format!("kernel does not fit input {input}"))),
                }
            }
            LayerKind::MaxPool { kernel, stride, pad } | LayerKind::AvgPool { kernel, stride, pad } => {
                match (window(input.h, *kernel, *stride, *pad), window(input.w, *kernel, *stride, *pad)) {
                    (Some(h), Some(w)) => Ok(Shape { c: input.c, h, w }),
                    _ => Err(self.invalid(format!("window does not fit input {input}"))),
                }
            }
            LayerKind::BatchNorm | LayerKind::Relu => Ok(input),
            LayerKind::GlobalPool => Ok(Shape { c: input.c, h: 1, w: 1 }),
            LayerKind::Fc { in_features, out_features, .. } => {
                let flat = input.c * input.h * input.w;
                if *in_features != flat {
                    return Err(self.invalid(format!(
                        "expects {in_features} features but receives {input} = {flat}"
                    )));
                }
                Ok(Shape { c: *out_features, h: 1, w: 1 })
            }
            LayerKind::Pix { zeta } => {
                if *zeta < 1 || *zeta > input.c {
                    return Err(self.invalid(format!("zeta must lie in [1, {}]", input.c)));
                }
                Ok(Shape { c: input.c.div_ceil(*zeta), ..input })
            }
            LayerKind::Residual { main, shortcut } => {
                let mut a = input;
                for l in main {
                    a = l.output_shape(a)?;
                }
                let mut b = input;
                for l in shortcut {
                    b = l.output_shape(b)?;
                }
                if a != b {
                    return Err(self.invalid(format!(
                        "main path yields {a} but shortcut yields {b}"
                    )));
                }
                Ok(a)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "
name small
input 3 32 32
conv 3 16 k=3 p=1   # stem
bn
relu
residual
  conv 16 8 k=1 squeeze
  relu
  conv 8 32 k=3 s=2 p=1
shortcut
  conv 16 32 k=1 s=2
end
gpool
fc 32 10 bias
";

    #[test]
    fn parses_and_validates() {
        let spec = NetworkSpec::parse(SMALL).unwrap();
        assert_eq!(spec.name, "small");
        assert_eq!(spec.layers.len(), 6);
        assert_eq!(spec.validate().unwrap(), Shape { c: 10, h: 1, w: 1 });
        match &spec.layers[3].kind {
            LayerKind::Residual { main, shortcut } => {
                assert_eq!(main.len(), 3);
                assert_eq!(shortcut.len(), 1);
                assert!(matches!(main[0].kind, LayerKind::Conv { squeeze: true, .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn channel_mismatch_names_layer() {
        let bad = SMALL.replace("conv 8 32 k=3", "conv 9 32 k=3");
        let err = NetworkSpec::parse(&bad).unwrap_err();
        match err {
            Error::Validation { layer, .. } => assert!(layer.contains("line 10"), "{layer}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let cases = [
            ("input 3 8 8\nfrobnicate 3\n", 2),
            ("input 3 8 8\nconv 3 4\n", 2),
            ("input 3 8 8\nconv 3 4 k=x\n", 2),
            ("input 3 8 8\nresidual\nrelu\n", 2),
            ("input 3 8 8\nend\n", 2),
            ("input 3 8 8\nrelu 3\n", 2),
        ];
        for (text, line) in cases {
            match NetworkSpec::parse(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
        assert!(NetworkSpec::parse("relu\n").is_err());
    }

    #[test]
    fn shortcut_mismatch_is_rejected() {
        let bad = "input 4 8 8\nresidual\nconv 4 8 k=1\nend\n";
        assert!(matches!(NetworkSpec::parse(bad), Err(Error::Validation { .. })));
    }

    #[test]
    fn bundled_specs_validate() {
        for (name, _) in BUNDLED_NETWORKS {
            let spec = NetworkSpec::bundled(name).unwrap();
            let out = spec.validate().unwrap();
            assert_eq!(out, Shape { c: 1000, h: 1, w: 1 }, "{name}");
        }
        assert!(NetworkSpec::bundled("alexnet").is_err());
    }
}
