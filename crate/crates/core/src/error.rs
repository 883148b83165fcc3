use thiserror::Error;

/// Spatial axis a geometry error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Height,
    Width,
}

impl core::fmt::Display for Axis {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Axis::Height => "height",
            Axis::Width => "width",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("{field} must be at least 1")]
    ZeroDimension { field: &'static str },

    #[error("{field}: expected {expected} values, got {actual}")]
    LengthMismatch {
        field: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{field}: element count overflows usize")]
    Overflow { field: &'static str },

    #[error("channel mismatch: input has {input} channels, kernel expects {kernel}")]
    ChannelMismatch { input: usize, kernel: usize },

    #[error("kernel extent {extent} exceeds padded input {available} along {axis}")]
    KernelTooLarge {
        axis: Axis,
        extent: usize,
        available: usize,
    },

    #[error("output {axis} would be {size}; it must be positive")]
    NonPositiveOutput { axis: Axis, size: i64 },

    #[error("out_pad along {axis} is {out_pad}; it must be less than the stride {stride}")]
    OutPadTooLarge {
        axis: Axis,
        out_pad: usize,
        stride: usize,
    },

    #[error("pad along {axis} is {pad}; transposed convolution requires pad <= kernel extent - 1 = {limit}")]
    PadTooLarge {
        axis: Axis,
        pad: usize,
        limit: usize,
    },

    #[error("shape mismatch in {what}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: [usize; 3],
        actual: [usize; 3],
    },

    #[error("gemm plan was built for different dimensions than the operands")]
    PlanMismatch,

    #[error("access reports describe different geometries")]
    GeometryMismatch,

    #[error("baseline report has zero total accesses")]
    EmptyBaseline,
}

pub type Result<T> = core::result::Result<T, Error>;
