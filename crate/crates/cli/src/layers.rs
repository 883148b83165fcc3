//! Layer descriptions, the built-in GAN presets and the layer-file parser.

use std::fmt;
use std::str::FromStr;

use huge2_core::{DeconvConfig, DilationConfig, Geometry};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Transpose,
    /// Dilated convolution at unit stride; `stride` holds the dilation.
    Dilated,
    /// Weight gradient of a strided convolution; `stride`/`pad` are the
    /// forward convolution's, `out_pad` is unused.
    WeightGrad,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Transpose => "transpose",
            LayerKind::Dilated => "dilated",
            LayerKind::WeightGrad => "weight_grad",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "transpose" => Ok(LayerKind::Transpose),
            "dilated" => Ok(LayerKind::Dilated),
            "weight_grad" | "grad" => Ok(LayerKind::WeightGrad),
            other => Err(format!(
                "unknown layer kind '{other}' (expected transpose, dilated or weight_grad)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub input: [usize; 3],
    pub kernel: [usize; 4],
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub out_pad: (usize, usize),
    pub kind: LayerKind,
}

impl LayerSpec {
    /// Geometry for the access model; fails if the layer is not valid for its
    /// kind.
    pub fn geometry(&self) -> Result<Geometry, huge2_core::Error> {
        if self.kernel[2] != self.input[2] {
            return Err(huge2_core::Error::ChannelMismatch {
                input: self.input[2],
                kernel: self.kernel[2],
            });
        }
        match self.kind {
            LayerKind::Transpose => {
                let cfg = DeconvConfig::new(self.stride, self.pad, self.out_pad)?;
                cfg.output_dims(self.input, self.kernel)?;
                Ok(Geometry::transpose(self.input, self.kernel, &cfg))
            }
            LayerKind::Dilated => {
                let cfg = DilationConfig::new(self.stride, (1, 1))?;
                let g = Geometry::dilated(self.input, self.kernel, &cfg, self.pad);
                huge2_core::count_path(huge2_core::PathKind::DilatedUntangled, &g)?;
                Ok(g)
            }
            LayerKind::WeightGrad => {
                let g = Geometry::grad(self.input, self.kernel, self.stride, self.pad);
                huge2_core::count_path(huge2_core::PathKind::GradUntangled, &g)?;
                Ok(g)
            }
        }
    }
}

pub const PRESETS: [&str; 4] = ["dcgan", "cgan", "dcgan_desk", "cgan_desk"];

fn transpose_layer(
    name: &str,
    hw: usize,
    c: usize,
    k: usize,
    n: usize,
    pad: usize,
    out_pad: usize,
) -> LayerSpec {
    LayerSpec {
        name: name.to_owned(),
        input: [hw, hw, c],
        kernel: [k, k, c, n],
        stride: (2, 2),
        pad: (pad, pad),
        out_pad: (out_pad, out_pad),
        kind: LayerKind::Transpose,
    }
}

fn shrink(mut layers: Vec<LayerSpec>) -> Vec<LayerSpec> {
    let div = |v: usize| (v / 16).max(1);
    for l in &mut layers {
        l.input[2] = div(l.input[2]);
        l.kernel[2] = div(l.kernel[2]);
        l.kernel[3] = div(l.kernel[3]);
    }
    layers
}

/// Generator layers of the DCGAN and CGAN models. Padding is chosen so each
/// layer exactly doubles the spatial size; the `_desk` variants divide every
/// channel count by 16 (floor, at least 1).
pub fn preset(name: &str) -> Result<Vec<LayerSpec>, CliError> {
    let dcgan = || {
        vec![
            transpose_layer("DC1", 4, 1024, 5, 512, 2, 1),
            transpose_layer("DC2", 8, 512, 5, 256, 2, 1),
            transpose_layer("DC3", 16, 256, 5, 128, 2, 1),
            transpose_layer("DC4", 32, 128, 5, 3, 2, 1),
        ]
    };
    let cgan = || {
        vec![
            transpose_layer("DC1", 8, 256, 4, 128, 1, 0),
            transpose_layer("DC2", 16, 128, 4, 3, 1, 0),
        ]
    };
    match name {
        "dcgan" => Ok(dcgan()),
        "cgan" => Ok(cgan()),
        "dcgan_desk" => Ok(shrink(dcgan())),
        "cgan_desk" => Ok(shrink(cgan())),
        other => Err(CliError::Usage(format!(
            "unknown preset '{other}' (expected one of {})",
            PRESETS.join(", ")
        ))),
    }
}

/// Parses a layer file: one layer per line, whitespace-separated fields
/// `name H W C R S N sm sn ph pw oh ow kind`. Blank lines and lines starting
/// with `#` are skipped, as is a header line whose first field is `name`.
pub fn parse_layer_file(text: &str) -> Result<Vec<LayerSpec>, CliError> {
    let mut layers = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields[0] == "name" {
            continue;
        }
        let bad = |msg: String| CliError::LayerFile { line: idx + 1, msg };
        if fields.len() != 14 {
            return Err(bad(format!("expected 14 fields, found {}", fields.len())));
        }
        let mut nums = [0usize; 12];
        for (slot, text) in nums.iter_mut().zip(&fields[1..13]) {
            *slot = text
                .parse()
                .map_err(|_| bad(format!("'{text}' is not a non-negative integer")))?;
        }
        let [h, w, c, r, s, n, sm, sn, ph, pw, oh, ow] = nums;
        let kind: LayerKind = fields[13].parse().map_err(bad)?;
        if kind != LayerKind::Transpose && (oh, ow) != (0, 0) {
            return Err(bad(format!("out_pad must be 0 for {kind} layers")));
        }
        let spec = LayerSpec {
            name: fields[0].to_owned(),
            input: [h, w, c],
            kernel: [r, s, c, n],
            stride: (sm, sn),
            pad: (ph, pw),
            out_pad: (oh, ow),
            kind,
        };
        spec.geometry().map_err(|e| bad(e.to_string()))?;
        layers.push(spec);
    }
    if layers.is_empty() {
        return Err(CliError::Usage("layer file contains no layers".into()));
    }
    Ok(layers)
}
