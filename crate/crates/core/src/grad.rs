//! Weight gradient of a strided convolution (the discriminator's backward
//! pass with respect to its kernels).
//!
//! For each input channel `c` and output channel `k`, the gradient slice
//! `dK[., ., c, k]` is the correlation of input map `c` with derivative map
//! `k`, where the derivative map acts as a kernel dilated by the forward
//! stride. With `H_out = W_out = 1` this degenerates to the outer product
//! `dK[m, n, c, k] = G[0, 0, k] * I[m, n, c]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::probe::{NoProbe, Probe};
use crate::tensor::{correlation_extent, Kernel4, Tensor3};
use crate::untangling::{build_gemm_plan, gather_tap};
use crate::Axis;

/// Operands of one weight-gradient computation.
#[derive(Debug, Clone, Copy)]
pub struct GradInstance<'a> {
    pub input: &'a Tensor3,
    /// Derivative of the loss with respect to the forward output.
    pub upstream_grad: &'a Tensor3,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    /// `[R, S, C, N]` of the forward kernel.
    pub kernel_dims: [usize; 4],
}

impl GradInstance<'_> {
    /// Checks that the upstream gradient has the forward output's shape and
    /// returns the padded input.
    fn prepare(&self) -> Result<Tensor3> {
        let [r, s, c, n] = self.kernel_dims;
        for (field, v) in [
            ("rows", r),
            ("cols", s),
            ("in_channels", c),
            ("out_channels", n),
            ("stride_h", self.stride.0),
            ("stride_w", self.stride.1),
        ] {
            if v == 0 {
                return Err(Error::ZeroDimension { field });
            }
        }
        if self.input.channels() != c {
            return Err(Error::ChannelMismatch {
                input: self.input.channels(),
                kernel: c,
            });
        }
        let padded = self.input.padded(self.pad.0, self.pad.1)?;
        let oh = correlation_extent(Axis::Height, padded.height(), r, self.stride.0, 1)?;
        let ow = correlation_extent(Axis::Width, padded.width(), s, self.stride.1, 1)?;
        if self.upstream_grad.dims() != [oh, ow, n] {
            return Err(Error::ShapeMismatch {
                what: "upstream gradient",
                expected: [oh, ow, n],
                actual: self.upstream_grad.dims(),
            });
        }
        Ok(padded)
    }
}

/// `dK[m, n, c, k] = sum_{h, w} G[h, w, k] * I_pad[s_h*h + m, s_w*w + n, c]`,
/// evaluated one `(c, k)` depth-wise correlation at a time.
pub fn discriminator_weight_grad(gi: &GradInstance<'_>) -> Result<Kernel4> {
    discriminator_weight_grad_with_probe(gi, &mut NoProbe)
}

pub fn discriminator_weight_grad_with_probe<P: Probe>(
    gi: &GradInstance<'_>,
    probe: &mut P,
) -> Result<Kernel4> {
    let padded = gi.prepare()?;
    let [r, s, c, n] = gi.kernel_dims;
    let g = gi.upstream_grad;
    let (sh, sw) = gi.stride;
    let mut out = Kernel4::zeros(r, s, c, n)?;
    for ci in 0..c {
        for k in 0..n {
            for m in 0..r {
                for q in 0..s {
                    let mut acc = 0.0f32;
                    for h in 0..g.height() {
                        for w in 0..g.width() {
                            acc += g.get(h, w, k) * padded.get(sh * h + m, sw * w + q, ci);
                            probe.mac();
                        }
                    }
                    out.set(m, q, ci, k, acc);
                    probe.output_writes(1);
                }
            }
        }
    }
    Ok(out)
}

/// Same quantity through the forward [`GemmPlan`](crate::GemmPlan): for each
/// tap the gathered `P x C` input crop is contracted with the `P x N`
/// derivative matrix, giving the tap's `C x N` gradient block in one GEMM.
pub fn weight_grad_untangled(gi: &GradInstance<'_>) -> Result<Kernel4> {
    weight_grad_untangled_with_probe(gi, &mut NoProbe)
}

pub fn weight_grad_untangled_with_probe<P: Probe>(
    gi: &GradInstance<'_>,
    probe: &mut P,
) -> Result<Kernel4> {
    let padded = gi.prepare()?;
    let [r, s, c, n] = gi.kernel_dims;
    let plan = build_gemm_plan(gi.kernel_dims, padded.dims(), gi.stride, (1, 1))?;
    let grad = gi.upstream_grad.data();
    let mut out = Kernel4::zeros(r, s, c, n)?;
    let mut lhs = Vec::with_capacity(plan.out_rows() * c);
    let mut block = vec![0.0f32; c * n];
    for entry in &plan.entries {
        gather_tap(&padded, &plan, entry, &mut lhs);
        block.fill(0.0);
        for (a_row, g_row) in lhs.chunks_exact(c).zip(grad.chunks_exact(n)) {
            for (&a, b_row) in a_row.iter().zip(block.chunks_exact_mut(n)) {
                for (b, &gv) in b_row.iter_mut().zip(g_row) {
                    *b += a * gv;
                    probe.mac();
                }
            }
        }
        out.data_mut()[entry.weight_offset..entry.weight_offset + c * n].copy_from_slice(&block);
        probe.output_writes(c * n);
    }
    Ok(out)
}
