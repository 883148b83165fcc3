//! Analytic MAC and memory-access model.
//!
//! The model charges one input read and one weight read per multiply-accumulate
//! an execution path's inner loops actually perform, including products
//! against inserted zeros in the naive paths. Output writes are charged once
//! per output element per accumulation epoch: every path forms each tap's
//! contribution in registers and flushes it, so an element receives one write
//! per tap that reaches it, and the decomposed paths add one more write per
//! element when partials are scattered into the final tensor.
//!
//! The counts are closed-form; tests pin them to what a [`CountingProbe`]
//! observes during execution.
//!
//! [`CountingProbe`]: crate::CountingProbe

use core::fmt;
use core::str::FromStr;

use crate::decomposition::phase_axis;
use crate::error::{Axis, Error, Result};
use crate::reference::DilationConfig;
use crate::tensor::{correlation_extent, DeconvConfig};

/// Execution paths the model knows how to count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PathKind {
    NaiveZeroInsert,
    Decomposed,
    Untangled,
    DilatedNaive,
    DilatedUntangled,
    GradNaive,
    GradUntangled,
}

impl PathKind {
    pub const ALL: [PathKind; 7] = [
        PathKind::NaiveZeroInsert,
        PathKind::Decomposed,
        PathKind::Untangled,
        PathKind::DilatedNaive,
        PathKind::DilatedUntangled,
        PathKind::GradNaive,
        PathKind::GradUntangled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PathKind::NaiveZeroInsert => "naive_zero_insert",
            PathKind::Decomposed => "decomposed",
            PathKind::Untangled => "untangled",
            PathKind::DilatedNaive => "dilated_naive",
            PathKind::DilatedUntangled => "dilated_untangled",
            PathKind::GradNaive => "grad_naive",
            PathKind::GradUntangled => "grad_untangled",
        }
    }
}

impl fmt::Display for PathKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnknownPath;

impl fmt::Display for UnknownPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("unknown path")
    }
}

impl FromStr for PathKind {
    type Err = UnknownPath;

    fn from_str(s: &str) -> core::result::Result<Self, Self::Err> {
        PathKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or(UnknownPath)
    }
}

/// Shapes and hyper-parameters of one layer. Transposed paths use `stride`,
/// `pad` and `out_pad`; dilated paths use `dilation`, `stride` and `pad`;
/// gradient paths use the forward `stride` and `pad`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub input: [usize; 3],
    pub kernel: [usize; 4],
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub out_pad: (usize, usize),
    pub dilation: (usize, usize),
}

impl Geometry {
    pub fn transpose(input: [usize; 3], kernel: [usize; 4], cfg: &DeconvConfig) -> Self {
        Self {
            input,
            kernel,
            stride: (cfg.stride_h, cfg.stride_w),
            pad: (cfg.pad_h, cfg.pad_w),
            out_pad: (cfg.out_pad_h, cfg.out_pad_w),
            dilation: (1, 1),
        }
    }

    pub fn dilated(
        input: [usize; 3],
        kernel: [usize; 4],
        cfg: &DilationConfig,
        pad: (usize, usize),
    ) -> Self {
        Self {
            input,
            kernel,
            stride: (cfg.stride_h, cfg.stride_w),
            pad,
            out_pad: (0, 0),
            dilation: (cfg.dil_h, cfg.dil_w),
        }
    }

    pub fn grad(
        input: [usize; 3],
        kernel: [usize; 4],
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Self {
        Self {
            input,
            kernel,
            stride,
            pad,
            out_pad: (0, 0),
            dilation: (1, 1),
        }
    }

    pub fn deconv_config(&self) -> Result<DeconvConfig> {
        DeconvConfig::new(self.stride, self.pad, self.out_pad)
    }

    pub fn dilation_config(&self) -> Result<DilationConfig> {
        DilationConfig::new(self.dilation, self.stride)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessReport {
    pub path: PathKind,
    pub geometry: Geometry,
    pub macs: u64,
    pub input_reads: u64,
    pub weight_reads: u64,
    pub output_writes: u64,
    /// Largest set of simultaneously allocated fp32 buffers, in elements.
    pub peak_live_floats: u64,
}

impl AccessReport {
    pub fn path_name(&self) -> &'static str {
        self.path.name()
    }

    pub fn total_accesses(&self) -> u64 {
        self.input_reads + self.weight_reads + self.output_writes
    }

    fn from_counts(
        path: PathKind,
        geometry: Geometry,
        macs: usize,
        output_writes: usize,
        peak: usize,
    ) -> Self {
        Self {
            path,
            geometry,
            macs: macs as u64,
            input_reads: macs as u64,
            weight_reads: macs as u64,
            output_writes: output_writes as u64,
            peak_live_floats: peak as u64,
        }
    }
}

fn require_channels(g: &Geometry) -> Result<()> {
    if g.input[2] != g.kernel[2] {
        return Err(Error::ChannelMismatch {
            input: g.input[2],
            kernel: g.kernel[2],
        });
    }
    Ok(())
}

/// Counts the work `path` performs on `geometry`.
pub fn count_path(path: PathKind, geometry: &Geometry) -> Result<AccessReport> {
    require_channels(geometry)?;
    let [h, w, c] = geometry.input;
    let [r, s, _, n] = geometry.kernel;
    let input_len = h * w * c;
    let kernel_len = r * s * c * n;
    let report = match path {
        PathKind::NaiveZeroInsert => {
            let cfg = geometry.deconv_config()?;
            let (oh, ow) = cfg.output_dims(geometry.input, geometry.kernel)?;
            let taps = r * s;
            let inserted = (oh + r - 1) * (ow + s - 1) * c;
            let peak = input_len + inserted + 2 * kernel_len + oh * ow * n + n;
            AccessReport::from_counts(
                path,
                *geometry,
                oh * ow * taps * c * n,
                oh * ow * taps * n,
                peak,
            )
        }
        PathKind::Decomposed | PathKind::Untangled => {
            let cfg = geometry.deconv_config()?;
            let (oh, ow) = cfg.output_dims(geometry.input, geometry.kernel)?;
            let mut products = 0;
            let mut largest_phase = 0;
            for a in 0..cfg.stride_h {
                let ah = phase_axis(r, cfg.stride_h, cfg.pad_h, oh, a);
                for b in 0..cfg.stride_w {
                    let aw = phase_axis(s, cfg.stride_w, cfg.pad_w, ow, b);
                    if ah.taps == 0 || aw.taps == 0 || ah.outputs == 0 || aw.outputs == 0 {
                        continue;
                    }
                    products += ah.outputs * aw.outputs * ah.taps * aw.taps;
                    let window = (ah.outputs + ah.taps - 1) * (aw.outputs + aw.taps - 1) * c;
                    let flipped = ah.taps * aw.taps * c * n;
                    let gathered = if path == PathKind::Untangled {
                        ah.outputs * aw.outputs * c
                    } else {
                        0
                    };
                    largest_phase = largest_phase.max(window + flipped + gathered);
                }
            }
            let out_len = oh * ow * n;
            let peak = input_len + 2 * kernel_len + largest_phase + 2 * out_len + n;
            AccessReport::from_counts(
                path,
                *geometry,
                products * c * n,
                products * n + out_len,
                peak,
            )
        }
        PathKind::DilatedNaive | PathKind::DilatedUntangled => {
            let cfg = geometry.dilation_config()?;
            let (ph, pw) = (h + 2 * geometry.pad.0, w + 2 * geometry.pad.1);
            let oh = correlation_extent(Axis::Height, ph, r, cfg.stride_h, cfg.dil_h)?;
            let ow = correlation_extent(Axis::Width, pw, s, cfg.stride_w, cfg.dil_w)?;
            let base = input_len + ph * pw * c + kernel_len + oh * ow * n + n;
            let (taps, extra) = if path == PathKind::DilatedNaive {
                let (rd, sd) = ((r - 1) * cfg.dil_h + 1, (s - 1) * cfg.dil_w + 1);
                (rd * sd, rd * sd * c * n)
            } else {
                (r * s, oh * ow * c)
            };
            AccessReport::from_counts(
                path,
                *geometry,
                oh * ow * taps * c * n,
                oh * ow * taps * n,
                base + extra,
            )
        }
        PathKind::GradNaive | PathKind::GradUntangled => {
            for (field, v) in [
                ("stride_h", geometry.stride.0),
                ("stride_w", geometry.stride.1),
            ] {
                if v == 0 {
                    return Err(Error::ZeroDimension { field });
                }
            }
            let (ph, pw) = (h + 2 * geometry.pad.0, w + 2 * geometry.pad.1);
            let oh = correlation_extent(Axis::Height, ph, r, geometry.stride.0, 1)?;
            let ow = correlation_extent(Axis::Width, pw, s, geometry.stride.1, 1)?;
            let base = input_len + ph * pw * c + oh * ow * n + kernel_len;
            let extra = if path == PathKind::GradUntangled {
                oh * ow * c + c * n
            } else {
                0
            };
            AccessReport::from_counts(
                path,
                *geometry,
                kernel_len * oh * ow,
                kernel_len,
                base + extra,
            )
        }
    };
    Ok(report)
}

/// `1 - total(optimized) / total(baseline)`.
pub fn reduction_ratio(baseline: &AccessReport, optimized: &AccessReport) -> Result<f64> {
    if baseline.geometry != optimized.geometry {
        return Err(Error::GeometryMismatch);
    }
    let base = baseline.total_accesses();
    if base == 0 {
        return Err(Error::EmptyBaseline);
    }
    Ok(1.0 - optimized.total_accesses() as f64 / base as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn deconv_geometry(
        h: usize,
        r: usize,
        c: usize,
        n: usize,
        s: usize,
        p: usize,
        op: usize,
    ) -> Geometry {
        let cfg = DeconvConfig::new((s, s), (p, p), (op, op)).unwrap();
        Geometry::transpose([h, h, c], [r, r, c, n], &cfg)
    }

    #[test]
    fn naive_counts_every_product() {
        let g = deconv_geometry(4, 5, 1, 1, 2, 2, 1);
        let naive = count_path(PathKind::NaiveZeroInsert, &g).unwrap();
        assert_eq!(naive.macs, 8 * 8 * 25);
        assert_eq!(naive.input_reads, 1600);
        assert_eq!(naive.weight_reads, 1600);
    }

    #[test]
    fn decomposition_removes_inserted_zeros() {
        let g = deconv_geometry(4, 5, 1, 1, 2, 2, 1);
        let dec = count_path(PathKind::Decomposed, &g).unwrap();
        assert_eq!(dec.macs, 400);
        assert_eq!(count_path(PathKind::Untangled, &g).unwrap().macs, 400);
    }

    #[test]
    fn unit_stride_reports_match() {
        let g = deconv_geometry(5, 3, 2, 3, 1, 1, 0);
        let naive = count_path(PathKind::NaiveZeroInsert, &g).unwrap();
        let dec = count_path(PathKind::Decomposed, &g).unwrap();
        assert_eq!(naive.macs, dec.macs);
        assert_eq!(naive.input_reads, dec.input_reads);
        assert_eq!(naive.weight_reads, dec.weight_reads);
        // The scatter pass is the only extra traffic without zero insertion.
        assert_eq!(dec.output_writes - naive.output_writes, 5 * 5 * 3);
    }

    #[test]
    fn ratio_arithmetic() {
        let g = deconv_geometry(4, 5, 1, 1, 2, 2, 1);
        let a = count_path(PathKind::NaiveZeroInsert, &g).unwrap();
        assert_eq!(reduction_ratio(&a, &a), Ok(0.0));
        let mk = |total: u64| AccessReport {
            path: PathKind::Untangled,
            geometry: g,
            macs: 0,
            input_reads: total,
            weight_reads: 0,
            output_writes: 0,
            peak_live_floats: 0,
        };
        let r = reduction_ratio(&mk(1000), &mk(400)).unwrap();
        assert!((r - 0.6).abs() < 1e-12);
        assert_eq!(reduction_ratio(&mk(0), &mk(400)), Err(Error::EmptyBaseline));
        let other = AccessReport {
            geometry: deconv_geometry(4, 5, 1, 1, 2, 1, 0),
            ..mk(10)
        };
        assert_eq!(
            reduction_ratio(&other, &mk(4)),
            Err(Error::GeometryMismatch)
        );
    }

    #[test]
    fn path_names_round_trip() {
        for p in PathKind::ALL {
            assert_eq!(p.name().parse::<PathKind>(), Ok(p));
        }
        assert_eq!("fast".parse::<PathKind>(), Err(UnknownPath));
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        let mut g = deconv_geometry(4, 3, 2, 2, 2, 0, 0);
        g.input[2] = 3;
        assert!(matches!(
            count_path(PathKind::Decomposed, &g),
            Err(Error::ChannelMismatch { .. })
        ));
        let g = deconv_geometry(4, 3, 2, 2, 2, 3, 0);
        assert!(matches!(
            count_path(PathKind::Untangled, &g),
            Err(Error::PadTooLarge { .. })
        ));
    }
}
