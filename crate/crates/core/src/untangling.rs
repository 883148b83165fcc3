//! Lowering a dense convolution to one GEMM per kernel tap.
//!
//! For tap `(m, n)` every output position reads exactly one input pixel, so
//! the tap's contribution to the whole output is a 1x1 convolution: an
//! `(H_out * W_out) x C` matrix gathered from a strided crop of the input,
//! times the tap's `C x N` weight slice. Summing the `R * S` products gives
//! the convolution. With channel-fastest storage each gathered row is one
//! contiguous copy and each weight slice is already a contiguous matrix.

use alloc::vec;
use alloc::vec::Vec;

use crate::decomposition::{
    decompose_kernel, pattern_setup, scatter_combine_with_probe, Partial, SubKernel,
};
use crate::error::{Axis, Error, Result};
use crate::probe::{NoProbe, Probe};
use crate::reference::DilationConfig;
use crate::tensor::{correlation_extent, DeconvConfig, Kernel4, Tensor3};

/// One kernel tap lowered to a 1x1 convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TapEntry {
    pub tap_row: usize,
    pub tap_col: usize,
    /// First input row read by this tap (output row 0).
    pub input_row_offset: usize,
    pub input_col_offset: usize,
    /// Number of input rows the tap touches, one per output row.
    pub crop_height: usize,
    pub crop_width: usize,
    /// Start of the tap's `C x N` slice in the kernel's flat data.
    pub weight_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GemmPlan {
    pub entries: Vec<TapEntry>,
    pub kernel_dims: [usize; 4],
    pub input_dims: [usize; 3],
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub out_height: usize,
    pub out_width: usize,
}

impl GemmPlan {
    /// Row count of every per-tap output matrix (`H_out * W_out`).
    pub fn out_rows(&self) -> usize {
        self.out_height * self.out_width
    }

    pub fn weight_slice<'k>(&self, kernel: &'k Kernel4, entry: &TapEntry) -> &'k [f32] {
        let len = self.kernel_dims[2] * self.kernel_dims[3];
        &kernel.data()[entry.weight_offset..entry.weight_offset + len]
    }
}

/// Plans the valid (unpadded) correlation of an `input_dims` tensor with a
/// `kernel_dims` kernel at the given stride and dilation.
pub fn build_gemm_plan(
    kernel_dims: [usize; 4],
    input_dims: [usize; 3],
    stride: (usize, usize),
    dilation: (usize, usize),
) -> Result<GemmPlan> {
    let [r, s, c, n] = kernel_dims;
    let [h, w, ic] = input_dims;
    if ic != c {
        return Err(Error::ChannelMismatch {
            input: ic,
            kernel: c,
        });
    }
    for (field, v) in [
        ("stride_h", stride.0),
        ("stride_w", stride.1),
        ("dil_h", dilation.0),
        ("dil_w", dilation.1),
    ] {
        if v == 0 {
            return Err(Error::ZeroDimension { field });
        }
    }
    let out_height = correlation_extent(Axis::Height, h, r, stride.0, dilation.0)?;
    let out_width = correlation_extent(Axis::Width, w, s, stride.1, dilation.1)?;
    let mut entries = Vec::with_capacity(r * s);
    for m in 0..r {
        for q in 0..s {
            let entry = TapEntry {
                tap_row: m,
                tap_col: q,
                input_row_offset: m * dilation.0,
                input_col_offset: q * dilation.1,
                crop_height: out_height,
                crop_width: out_width,
                weight_offset: (m * s + q) * c * n,
            };
            // A tap that never meets a sample contributes nothing.
            if entry.crop_height > 0 && entry.crop_width > 0 {
                entries.push(entry);
            }
        }
    }
    Ok(GemmPlan {
        entries,
        kernel_dims,
        input_dims,
        stride,
        dilation,
        out_height,
        out_width,
    })
}

/// Copies the tap's receptive crop into `buf` as an `out_rows x C` matrix.
pub(crate) fn gather_tap(input: &Tensor3, plan: &GemmPlan, entry: &TapEntry, buf: &mut Vec<f32>) {
    let c = input.channels();
    buf.clear();
    for i in 0..entry.crop_height {
        let y = entry.input_row_offset + plan.stride.0 * i;
        for j in 0..entry.crop_width {
            let x = entry.input_col_offset + plan.stride.1 * j;
            buf.extend_from_slice(input.pixel(y, x));
        }
    }
    debug_assert_eq!(buf.len(), entry.crop_height * entry.crop_width * c);
}

fn execute<P: Probe>(
    input: &Tensor3,
    kernel: &Kernel4,
    plan: &GemmPlan,
    probe: &mut P,
) -> Vec<f32> {
    let [_, _, c, n] = plan.kernel_dims;
    let mut out = vec![0.0f32; plan.out_rows() * n];
    let mut lhs = Vec::with_capacity(plan.out_rows() * c);
    let mut acc = vec![0.0f32; n];
    for entry in &plan.entries {
        gather_tap(input, plan, entry, &mut lhs);
        let weights = plan.weight_slice(kernel, entry);
        // Crops span the full output, so lhs row i maps to output row i.
        for (row, dst) in lhs.chunks_exact(c).zip(out.chunks_exact_mut(n)) {
            acc.fill(0.0);
            for (&a, w_row) in row.iter().zip(weights.chunks_exact(n)) {
                for (acc_k, &w) in acc.iter_mut().zip(w_row) {
                    *acc_k += a * w;
                    probe.mac();
                }
            }
            for (d, &a) in dst.iter_mut().zip(&acc) {
                *d += a;
            }
            probe.output_writes(n);
        }
    }
    out
}

/// Runs `plan`: one GEMM per tap, products accumulated into a single output.
pub fn execute_gemm_plan(input: &Tensor3, kernel: &Kernel4, plan: &GemmPlan) -> Result<Tensor3> {
    execute_gemm_plan_with_probe(input, kernel, plan, &mut NoProbe)
}

pub fn execute_gemm_plan_with_probe<P: Probe>(
    input: &Tensor3,
    kernel: &Kernel4,
    plan: &GemmPlan,
    probe: &mut P,
) -> Result<Tensor3> {
    if input.dims() != plan.input_dims || kernel.dims() != plan.kernel_dims {
        return Err(Error::PlanMismatch);
    }
    let data = execute(input, kernel, plan, probe);
    Tensor3::from_vec(plan.out_height, plan.out_width, plan.kernel_dims[3], data)
}

/// One residue class of a transposed convolution, computed through a
/// [`GemmPlan`] over the pattern's input window.
pub fn untangle_pattern(input: &Tensor3, sub: &SubKernel, cfg: &DeconvConfig) -> Result<Partial> {
    untangle_pattern_with_probe(input, sub, cfg, &mut NoProbe)
}

pub fn untangle_pattern_with_probe<P: Probe>(
    input: &Tensor3,
    sub: &SubKernel,
    cfg: &DeconvConfig,
    probe: &mut P,
) -> Result<Partial> {
    if input.channels() != sub.origin()[2] {
        return Err(Error::ChannelMismatch {
            input: input.channels(),
            kernel: sub.origin()[2],
        });
    }
    let (mut partial, work) = pattern_setup(input, sub, cfg)?;
    if let Some(work) = work {
        let plan = build_gemm_plan(work.weights.dims(), work.window.dims(), (1, 1), (1, 1))?;
        debug_assert_eq!(
            (plan.out_height, plan.out_width),
            (partial.rows, partial.cols)
        );
        debug_assert_eq!(plan.entries.len(), work.sub.tap_count());
        partial.data = execute(&work.window, &work.weights, &plan, probe);
    }
    Ok(partial)
}

/// Transposed convolution: decomposition into residue classes, each class
/// untangled into per-tap GEMMs, then scatter/combine.
pub fn conv2d_transpose_untangled(
    input: &Tensor3,
    kernel: &Kernel4,
    cfg: &DeconvConfig,
) -> Result<Tensor3> {
    conv2d_transpose_untangled_with_probe(input, kernel, cfg, &mut NoProbe)
}

pub fn conv2d_transpose_untangled_with_probe<P: Probe>(
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
        .map(|sub| untangle_pattern_with_probe(input, sub, cfg, probe))
        .collect::<Result<Vec<_>>>()?;
    scatter_combine_with_probe(&partials, &set, [oh, ow, kernel.out_channels()], probe)
}

/// Dilated convolution through a [`GemmPlan`]; tap `(m, n)` reads the crop
/// offset by `(dil_h * m, dil_w * n)`.
pub fn conv2d_dilated_untangled(
    input: &Tensor3,
    kernel: &Kernel4,
    cfg: &DilationConfig,
    pad_h: usize,
    pad_w: usize,
) -> Result<Tensor3> {
    conv2d_dilated_untangled_with_probe(input, kernel, cfg, pad_h, pad_w, &mut NoProbe)
}

pub fn conv2d_dilated_untangled_with_probe<P: Probe>(
    input: &Tensor3,
    kernel: &Kernel4,
    cfg: &DilationConfig,
    pad_h: usize,
    pad_w: usize,
    probe: &mut P,
) -> Result<Tensor3> {
    if input.channels() != kernel.in_channels() {
        return Err(Error::ChannelMismatch {
            input: input.channels(),
            kernel: kernel.in_channels(),
        });
    }
    let padded = input.padded(pad_h, pad_w)?;
    let plan = build_gemm_plan(
        kernel.dims(),
        padded.dims(),
        (cfg.stride_h, cfg.stride_w),
        (cfg.dil_h, cfg.dil_w),
    )?;
    execute_gemm_plan_with_probe(&padded, kernel, &plan, probe)
}
