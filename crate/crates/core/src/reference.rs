//! Naive convolution kernels.
//!
//! These are the oracles every optimized path is checked against, plus the
//! two "naive" baselines (zero-inserted input, zero-spread kernel) whose
//! wasted work the decomposed and untangled paths remove. Standard and
//! dilated convolution use cross-correlation semantics (no kernel flip); the
//! only flip in the crate happens inside the zero-insertion emulation.

use alloc::vec;

use crate::error::{Axis, Error, Result};
use crate::probe::{NoProbe, Probe};
use crate::tensor::{correlation_extent, DeconvConfig, Kernel4, Tensor3};

/// Dilation and stride of a dilated (atrous) convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DilationConfig {
    pub dil_h: usize,
    pub dil_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
}

impl DilationConfig {
    pub fn new(dilation: (usize, usize), stride: (usize, usize)) -> Result<Self> {
        for (field, v) in [
            ("dil_h", dilation.0),
            ("dil_w", dilation.1),
            ("stride_h", stride.0),
            ("stride_w", stride.1),
        ] {
            if v == 0 {
                return Err(Error::ZeroDimension { field });
            }
        }
        Ok(Self {
            dil_h: dilation.0,
            dil_w: dilation.1,
            stride_h: stride.0,
            stride_w: stride.1,
        })
    }
}

fn check_channels(input: &Tensor3, kernel: &Kernel4) -> Result<()> {
    if input.channels() != kernel.in_channels() {
        return Err(Error::ChannelMismatch {
            input: input.channels(),
            kernel: kernel.in_channels(),
        });
    }
    Ok(())
}

/// Valid correlation of an already padded input.
///
/// `out[y, x, k] = sum_{m, n, c} in[y*sh + m*dh, x*sw + n*dw, c] * K[m, n, c, k]`,
/// with `c` innermost, then `n`, then `m`. Each tap's channel sum is formed in
/// a register block and flushed once per output element.
pub(crate) fn correlate<P: Probe>(
    input: &Tensor3,
    kernel: &Kernel4,
    stride: (usize, usize),
    dilation: (usize, usize),
    probe: &mut P,
) -> Result<Tensor3> {
    check_channels(input, kernel)?;
    let [r, s, _, n] = kernel.dims();
    let oh = correlation_extent(Axis::Height, input.height(), r, stride.0, dilation.0)?;
    let ow = correlation_extent(Axis::Width, input.width(), s, stride.1, dilation.1)?;
    let mut out = Tensor3::zeros(oh, ow, n)?;
    let mut acc = vec![0.0f32; n];
    for oy in 0..oh {
        for ox in 0..ow {
            let base = (oy * ow + ox) * n;
            for m in 0..r {
                let iy = oy * stride.0 + m * dilation.0;
                for q in 0..s {
                    let ix = ox * stride.1 + q * dilation.1;
                    let weights = kernel.tap(m, q);
                    acc.fill(0.0);
                    for (&x, row) in input.pixel(iy, ix).iter().zip(weights.chunks_exact(n)) {
                        for (a, &w) in acc.iter_mut().zip(row) {
                            *a += x * w;
                            probe.mac();
                        }
                    }
                    for (o, &a) in out.data_mut()[base..base + n].iter_mut().zip(&acc) {
                        *o += a;
                    }
                    probe.output_writes(n);
                }
            }
        }
    }
    Ok(out)
}

/// Strided, zero-padded cross-correlation.
pub fn conv2d_standard(
    input: &Tensor3,
    kernel: &Kernel4,
    stride_h: usize,
    stride_w: usize,
    pad_h: usize,
    pad_w: usize,
) -> Result<Tensor3> {
    if stride_h == 0 || stride_w == 0 {
        return Err(Error::ZeroDimension {
            field: if stride_h == 0 {
                "stride_h"
            } else {
                "stride_w"
            },
        });
    }
    check_channels(input, kernel)?;
    let padded = input.padded(pad_h, pad_w)?;
    correlate(&padded, kernel, (stride_h, stride_w), (1, 1), &mut NoProbe)
}

/// Places `s_m - 1` zero rows between adjacent input rows and `s_n - 1` zero
/// columns between adjacent columns. No trailing zeros are added.
pub fn zero_insert(input: &Tensor3, s_m: usize, s_n: usize) -> Result<Tensor3> {
    if s_m == 0 || s_n == 0 {
        return Err(Error::ZeroDimension {
            field: if s_m == 0 { "s_m" } else { "s_n" },
        });
    }
    let [h, w, c] = input.dims();
    let mut out = Tensor3::zeros(s_m * (h - 1) + 1, s_n * (w - 1) + 1, c)?;
    let out_w = out.width();
    for y in 0..h {
        for x in 0..w {
            let dst = (y * s_m * out_w + x * s_n) * c;
            out.data_mut()[dst..dst + c].copy_from_slice(input.pixel(y, x));
        }
    }
    Ok(out)
}

/// Transposed convolution by scatter-accumulate:
/// `O[s_m*h + m - p_h, s_n*w + n - p_w, k] += I[h, w, c] * K[m, n, c, k]`
/// over every target that lands inside the output.
pub fn conv2d_transpose_reference(
    input: &Tensor3,
    kernel: &Kernel4,
    cfg: &DeconvConfig,
) -> Result<Tensor3> {
    let (oh, ow) = cfg.output_dims(input.dims(), kernel.dims())?;
    let [h, w, c] = input.dims();
    let [r, s, _, n] = kernel.dims();
    let mut out = Tensor3::zeros(oh, ow, n)?;
    for iy in 0..h {
        for ix in 0..w {
            for m in 0..r {
                let y = (cfg.stride_h * iy + m) as isize - cfg.pad_h as isize;
                if y < 0 || y >= oh as isize {
                    continue;
                }
                for q in 0..s {
                    let x = (cfg.stride_w * ix + q) as isize - cfg.pad_w as isize;
                    if x < 0 || x >= ow as isize {
                        continue;
                    }
                    for ci in 0..c {
                        let v = input.get(iy, ix, ci);
                        for k in 0..n {
                            let i = out.index(y as usize, x as usize, k);
                            out.data_mut()[i] += v * kernel.get(m, q, ci, k);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Transposed convolution emulated by a direct convolution: zero-insert the
/// input, pad it by `R - 1 - p` (plus `out_pad` on the bottom/right), then
/// correlate at stride 1 with the spatially flipped kernel.
pub fn conv2d_transpose_via_zero_insertion(
    input: &Tensor3,
    kernel: &Kernel4,
    cfg: &DeconvConfig,
) -> Result<Tensor3> {
    conv2d_transpose_via_zero_insertion_with_probe(input, kernel, cfg, &mut NoProbe)
}

pub fn conv2d_transpose_via_zero_insertion_with_probe<P: Probe>(
    input: &Tensor3,
    kernel: &Kernel4,
    cfg: &DeconvConfig,
    probe: &mut P,
) -> Result<Tensor3> {
    let (oh, ow) = cfg.output_dims(input.dims(), kernel.dims())?;
    let spread = zero_insert(input, cfg.stride_h, cfg.stride_w)?;
    let top = kernel.rows() - 1 - cfg.pad_h;
    let left = kernel.cols() - 1 - cfg.pad_w;
    let padded = spread.window(
        -(top as isize),
        spread.height() + 2 * top + cfg.out_pad_h,
        -(left as isize),
        spread.width() + 2 * left + cfg.out_pad_w,
    )?;
    let out = correlate(&padded, &kernel.flipped(), (1, 1), (1, 1), probe)?;
    debug_assert_eq!((out.height(), out.width()), (oh, ow));
    Ok(out)
}

/// Dilated convolution:
/// `O[y, x, k] = sum I_pad[y*stride + dil*m, x*stride + dil*n, c] * K[m, n, c, k]`.
pub fn conv2d_dilated(
    input: &Tensor3,
    kernel: &Kernel4,
    cfg: &DilationConfig,
    pad_h: usize,
    pad_w: usize,
) -> Result<Tensor3> {
    check_channels(input, kernel)?;
    let padded = input.padded(pad_h, pad_w)?;
    correlate(
        &padded,
        kernel,
        (cfg.stride_h, cfg.stride_w),
        (cfg.dil_h, cfg.dil_w),
        &mut NoProbe,
    )
}

/// Inserts `dil - 1` zero taps between adjacent kernel taps of every `(c, k)`
/// slice, giving a `((R-1)*dil_h + 1) x ((S-1)*dil_w + 1)` kernel.
pub fn spread_kernel(kernel: &Kernel4, dil_h: usize, dil_w: usize) -> Result<Kernel4> {
    if dil_h == 0 || dil_w == 0 {
        return Err(Error::ZeroDimension {
            field: if dil_h == 0 { "dil_h" } else { "dil_w" },
        });
    }
    let [r, s, c, n] = kernel.dims();
    let mut out = Kernel4::zeros((r - 1) * dil_h + 1, (s - 1) * dil_w + 1, c, n)?;
    let tap_len = c * n;
    for m in 0..r {
        for q in 0..s {
            let dst = out.index(m * dil_h, q * dil_w, 0, 0);
            out.data_mut()[dst..dst + tap_len].copy_from_slice(kernel.tap(m, q));
        }
    }
    Ok(out)
}

/// Dilated convolution computed the wasteful way: spread the kernel with
/// zeros and run a dense correlation over it.
pub fn conv2d_dilated_via_spread_kernel(
    input: &Tensor3,
    kernel: &Kernel4,
    cfg: &DilationConfig,
    pad_h: usize,
    pad_w: usize,
) -> Result<Tensor3> {
    conv2d_dilated_via_spread_kernel_with_probe(input, kernel, cfg, pad_h, pad_w, &mut NoProbe)
}

pub fn conv2d_dilated_via_spread_kernel_with_probe<P: Probe>(
    input: &Tensor3,
    kernel: &Kernel4,
    cfg: &DilationConfig,
    pad_h: usize,
    pad_w: usize,
    probe: &mut P,
) -> Result<Tensor3> {
    check_channels(input, kernel)?;
    let padded = input.padded(pad_h, pad_w)?;
    let spread = spread_kernel(kernel, cfg.dil_h, cfg.dil_w)?;
    correlate(
        &padded,
        &spread,
        (cfg.stride_h, cfg.stride_w),
        (1, 1),
        probe,
    )
}
