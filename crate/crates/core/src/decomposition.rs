//! Stride-phase decomposition of a transposed convolution.
//!
//! Output row `y` of a transposed convolution only receives contributions
//! from kernel rows `m` with `m = (y + p) mod s`; every other kernel row would
//! meet an inserted zero. Grouping outputs by their residue `a = y mod s`
//! therefore splits the kernel into `s_m * s_n` disjoint sub-kernels, each of
//! which runs as a small dense stride-1 convolution over the original
//! (un-inserted) input. The partial outputs are then interleaved back by
//! residue.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::probe::{NoProbe, Probe};
use crate::reference::correlate;
use crate::tensor::{DeconvConfig, Kernel4, Tensor3};

/// Geometry of one residue class along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct PhaseAxis {
    /// Smallest kernel index in this class.
    pub first_tap: usize,
    /// Number of kernel indices in this class.
    pub taps: usize,
    /// Number of output coordinates congruent to the residue.
    pub outputs: usize,
    /// Input coordinate read by output 0 against the last tap of the
    /// class; negative values fall in the implicit zero border.
    pub offset: isize,
}

pub(crate) fn phase_axis(
    kernel_len: usize,
    stride: usize,
    pad: usize,
    out_len: usize,
    residue: usize,
) -> PhaseAxis {
    let first_tap = (residue + pad) % stride;
    let taps = if first_tap < kernel_len {
        (kernel_len - first_tap).div_ceil(stride)
    } else {
        0
    };
    let outputs = if residue < out_len {
        (out_len - residue).div_ceil(stride)
    } else {
        0
    };
    let lead = (residue + pad - first_tap) / stride;
    PhaseAxis {
        first_tap,
        taps,
        outputs,
        offset: lead as isize + 1 - taps as isize,
    }
}

fn residue_count(len: usize, stride: usize, residue: usize) -> usize {
    if residue < len {
        (len - residue).div_ceil(stride)
    } else {
        0
    }
}

/// The kernel taps that serve output residue `(residue_h, residue_w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubKernel {
    pub residue_h: usize,
    pub residue_w: usize,
    /// Original kernel rows in this class, ascending.
    pub source_rows: Vec<usize>,
    /// Original kernel columns in this class, ascending.
    pub source_cols: Vec<usize>,
    /// `None` when the class holds no taps (kernel smaller than the stride).
    pub weights: Option<Kernel4>,
    origin: [usize; 4],
}

impl SubKernel {
    pub fn rows(&self) -> usize {
        self.source_rows.len()
    }

    pub fn cols(&self) -> usize {
        self.source_cols.len()
    }

    pub fn tap_count(&self) -> usize {
        self.rows() * self.cols()
    }

    /// `[R, S, C, N]` of the kernel this was cut from.
    pub fn origin(&self) -> [usize; 4] {
        self.origin
    }
}

/// All `s_m * s_n` sub-kernels of one kernel, ordered row-major by residue.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSet {
    pub stride_h: usize,
    pub stride_w: usize,
    pub patterns: Vec<SubKernel>,
    pub origin: [usize; 4],
}

impl PatternSet {
    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn total_taps(&self) -> usize {
        self.patterns.iter().map(SubKernel::tap_count).sum()
    }
}

/// Splits `kernel` into the sub-kernels used by each output residue class
/// under `cfg`'s stride and padding.
pub fn decompose_kernel(kernel: &Kernel4, cfg: &DeconvConfig) -> Result<PatternSet> {
    cfg.validate()?;
    let [r, s, c, n] = kernel.dims();
    let (sh, sw) = (cfg.stride_h, cfg.stride_w);
    let mut patterns = Vec::with_capacity(sh * sw);
    for a in 0..sh {
        let rows: Vec<usize> = ((a + cfg.pad_h) % sh..r).step_by(sh).collect();
        for b in 0..sw {
            let cols: Vec<usize> = ((b + cfg.pad_w) % sw..s).step_by(sw).collect();
            let weights = if rows.is_empty() || cols.is_empty() {
                None
            } else {
                let mut sub = Kernel4::zeros(rows.len(), cols.len(), c, n)?;
                let tap_len = c * n;
                for (i, &m) in rows.iter().enumerate() {
                    for (j, &q) in cols.iter().enumerate() {
                        let dst = sub.index(i, j, 0, 0);
                        sub.data_mut()[dst..dst + tap_len].copy_from_slice(kernel.tap(m, q));
                    }
                }
                Some(sub)
            };
            patterns.push(SubKernel {
                residue_h: a,
                residue_w: b,
                source_rows: rows.clone(),
                source_cols: cols,
                weights,
                origin: kernel.dims(),
            });
        }
    }
    Ok(PatternSet {
        stride_h: sh,
        stride_w: sw,
        patterns,
        origin: kernel.dims(),
    })
}

/// Partial output of one residue class: `rows x cols x channels`, possibly
/// empty when the output has no coordinates in the class.
#[derive(Debug, Clone, PartialEq)]
pub struct Partial {
    pub residue: (usize, usize),
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Partial {
    fn zeros(residue: (usize, usize), rows: usize, cols: usize, channels: usize) -> Self {
        Self {
            residue,
            rows,
            cols,
            channels,
            data: alloc::vec![0.0; rows * cols * channels],
        }
    }

    pub fn get(&self, row: usize, col: usize, k: usize) -> f32 {
        self.data[(row * self.cols + col) * self.channels + k]
    }

    pub fn to_tensor(&self) -> Option<Tensor3> {
        Tensor3::from_vec(self.rows, self.cols, self.channels, self.data.clone()).ok()
    }
}

/// Input window and output extent for one pattern; `None` when the pattern
/// contributes nothing (no taps or no outputs).
pub(crate) struct PatternWork<'a> {
    pub window: Tensor3,
    /// Weights in correlation order (reversed within the class).
    pub weights: Kernel4,
    pub sub: &'a SubKernel,
}

pub(crate) fn pattern_setup<'a>(
    input: &Tensor3,
    sub: &'a SubKernel,
    cfg: &DeconvConfig,
) -> Result<(Partial, Option<PatternWork<'a>>)> {
    let (oh, ow) = cfg.output_dims(input.dims(), sub.origin)?;
    let ax_h = phase_axis(sub.origin[0], cfg.stride_h, cfg.pad_h, oh, sub.residue_h);
    let ax_w = phase_axis(sub.origin[1], cfg.stride_w, cfg.pad_w, ow, sub.residue_w);
    let n = sub.origin[3];
    let empty = Partial::zeros(
        (sub.residue_h, sub.residue_w),
        ax_h.outputs,
        ax_w.outputs,
        n,
    );
    let Some(weights) = sub.weights.as_ref() else {
        return Ok((empty, None));
    };
    if ax_h.outputs == 0 || ax_w.outputs == 0 {
        return Ok((empty, None));
    }
    debug_assert_eq!((ax_h.taps, ax_w.taps), (sub.rows(), sub.cols()));
    let window = input.window(
        ax_h.offset,
        ax_h.outputs + ax_h.taps - 1,
        ax_w.offset,
        ax_w.outputs + ax_w.taps - 1,
    )?;
    Ok((
        empty,
        Some(PatternWork {
            window,
            weights: weights.flipped(),
            sub,
        }),
    ))
}

fn check_pattern_channels(input: &Tensor3, sub: &SubKernel) -> Result<()> {
    if input.channels() != sub.origin[2] {
        return Err(Error::ChannelMismatch {
            input: input.channels(),
            kernel: sub.origin[2],
        });
    }
    Ok(())
}

/// Dense stride-1 convolution of the un-inserted input with one sub-kernel,
/// producing that residue class of the output.
pub fn conv_pattern(input: &Tensor3, sub: &SubKernel, cfg: &DeconvConfig) -> Result<Partial> {
    conv_pattern_with_probe(input, sub, cfg, &mut NoProbe)
}

pub fn conv_pattern_with_probe<P: Probe>(
    input: &Tensor3,
    sub: &SubKernel,
    cfg: &DeconvConfig,
    probe: &mut P,
) -> Result<Partial> {
    check_pattern_channels(input, sub)?;
    let (mut partial, work) = pattern_setup(input, sub, cfg)?;
    if let Some(work) = work {
        let out = correlate(&work.window, &work.weights, (1, 1), (1, 1), probe)?;
        debug_assert_eq!((out.height(), out.width()), (partial.rows, partial.cols));
        partial.data = out.into_vec();
    }
    Ok(partial)
}

/// Interleaves the partials: `O[y, x, k] = partial[(y mod s_m, x mod s_n)][y / s_m, x / s_n, k]`.
pub fn scatter_combine(
    partials: &[Partial],
    patterns: &PatternSet,
    out_dims: [usize; 3],
) -> Result<Tensor3> {
    scatter_combine_with_probe(partials, patterns, out_dims, &mut NoProbe)
}

pub fn scatter_combine_with_probe<P: Probe>(
    partials: &[Partial],
    patterns: &PatternSet,
    out_dims: [usize; 3],
    probe: &mut P,
) -> Result<Tensor3> {
    let [oh, ow, n] = out_dims;
    let (sh, sw) = (patterns.stride_h, patterns.stride_w);
    if partials.len() != patterns.len() {
        return Err(Error::LengthMismatch {
            field: "partials",
            expected: patterns.len(),
            actual: partials.len(),
        });
    }
    for (p, sub) in partials.iter().zip(&patterns.patterns) {
        let expected = [
            residue_count(oh, sh, sub.residue_h),
            residue_count(ow, sw, sub.residue_w),
            n,
        ];
        let actual = [p.rows, p.cols, p.channels];
        if p.residue != (sub.residue_h, sub.residue_w)
            || expected != actual
            || p.data.len() != p.rows * p.cols * n
        {
            return Err(Error::ShapeMismatch {
                what: "partial",
                expected,
                actual,
            });
        }
    }
    let mut out = Tensor3::zeros(oh, ow, n)?;
    for (index, p) in partials.iter().enumerate() {
        let (a, b) = p.residue;
        for qy in 0..p.rows {
            let y = a + sh * qy;
            for qx in 0..p.cols {
                let x = b + sw * qx;
                let dst = (y * ow + x) * n;
                let src = (qy * p.cols + qx) * n;
                out.data_mut()[dst..dst + n].copy_from_slice(&p.data[src..src + n]);
                for k in 0..n {
                    probe.scatter_write(index, dst + k);
                }
            }
        }
    }
    Ok(out)
}

/// Transposed convolution via kernel decomposition; no multiplication ever
/// touches an inserted zero.
pub fn conv2d_transpose_decomposed(
    input: &Tensor3,
    kernel: &Kernel4,
    cfg: &DeconvConfig,
) -> Result<Tensor3> {
    conv2d_transpose_decomposed_with_probe(input, kernel, cfg, &mut NoProbe)
}

pub fn conv2d_transpose_decomposed_with_probe<P: Probe>(
    input: &Tensor3,
    kernel: &Kernel4,
    cfg: &DeconvConfig,
    probe: &mut P,
) -> Result<Tensor3> {
    let (oh, ow) = cfg.output_dims(input.dims(), kernel.dims())?;
    let set = decompose_kernel(kernel, cfg)?;
    let partials = set
        .patterns
        .iter()
        .map(|sub| conv_pattern_with_probe(input, sub, cfg, probe))
        .collect::<Result<Vec<_>>>()?;
    scatter_combine_with_probe(&partials, &set, [oh, ow, kernel.out_channels()], probe)
}
