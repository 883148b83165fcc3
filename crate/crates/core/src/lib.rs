//! Transposed and dilated convolution kernels for memory-constrained CPUs.
//!
//! A transposed convolution is usually emulated by inserting zeros between
//! input samples and running a dense convolution, so most multiplications
//! hit a zero. This crate removes that waste in two stages:
//!
//! 1. [`decompose_kernel`] splits the kernel into one sub-kernel per output
//!    stride phase; each runs as a small dense convolution on the original
//!    input and [`scatter_combine`] interleaves the results.
//! 2. [`build_gemm_plan`] / [`execute_gemm_plan`] lower each dense
//!    convolution into one `1x1` convolution (a GEMM) per kernel tap.
//!
//! The same GEMM lowering serves dilated convolution and the weight gradient
//! of strided convolution. Every optimized path is checked against the naive
//! kernels in [`reference`], and [`count_path`] models the MACs and memory
//! traffic each path performs.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]

extern crate alloc;

pub mod decomposition;
mod error;
pub mod grad;
pub mod instrumentation;
pub mod probe;
pub mod reference;
pub mod tensor;
pub mod untangling;

pub use decomposition::{
    conv2d_transpose_decomposed, conv2d_transpose_decomposed_with_probe, conv_pattern,
    conv_pattern_with_probe, decompose_kernel, scatter_combine, scatter_combine_with_probe,
    Partial, PatternSet, SubKernel,
};
pub use error::{Axis, Error, Result};
pub use grad::{
    discriminator_weight_grad, discriminator_weight_grad_with_probe, weight_grad_untangled,
    weight_grad_untangled_with_probe, GradInstance,
};
pub use instrumentation::{
    count_path, reduction_ratio, AccessReport, Geometry, PathKind, UnknownPath,
};
pub use probe::{CountingProbe, NoProbe, Probe};
pub use reference::{
    conv2d_dilated, conv2d_dilated_via_spread_kernel, conv2d_dilated_via_spread_kernel_with_probe,
    conv2d_standard, conv2d_transpose_reference, conv2d_transpose_via_zero_insertion,
    conv2d_transpose_via_zero_insertion_with_probe, spread_kernel, zero_insert, DilationConfig,
};
pub use tensor::{
    kernels_close, make_tensor, max_abs_diff, tensors_close, DeconvConfig, Fill, Kernel4, Tensor3,
};
pub use untangling::{
    build_gemm_plan, conv2d_dilated_untangled, conv2d_dilated_untangled_with_probe,
    conv2d_transpose_untangled, conv2d_transpose_untangled_with_probe, execute_gemm_plan,
    execute_gemm_plan_with_probe, untangle_pattern, untangle_pattern_with_probe, GemmPlan,
    TapEntry,
};
