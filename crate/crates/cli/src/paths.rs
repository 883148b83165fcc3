//! Mapping from CLI path names to library kernels, and their execution.

use huge2_core::{
    conv2d_dilated_untangled, conv2d_dilated_via_spread_kernel, conv2d_transpose_decomposed,
    conv2d_transpose_untangled, conv2d_transpose_via_zero_insertion, conv_pattern,
    decompose_kernel, discriminator_weight_grad, scatter_combine, untangle_pattern,
    weight_grad_untangled, DeconvConfig, DilationConfig, Geometry, GradInstance, Kernel4, Partial,
    PathKind, SubKernel, Tensor3,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::CliError;
use crate::format::Stored;
use crate::layers::{LayerKind, LayerSpec};

/// Short names accepted everywhere a path is expected, in addition to the
/// full [`PathKind`] names.
pub const SHORT_NAMES: [&str; 3] = ["naive", "decomposed", "untangled"];

fn valid_names() -> String {
    let mut names: Vec<&str> = SHORT_NAMES.to_vec();
    names.extend(
        PathKind::ALL
            .iter()
            .map(|p| p.name())
            .filter(|n| !SHORT_NAMES.contains(n)),
    );
    names.join(", ")
}

/// Checks that `name` is a known path name.
pub fn check_name(name: &str) -> Result<(), CliError> {
    if SHORT_NAMES.contains(&name) || name.parse::<PathKind>().is_ok() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "unknown path '{name}'; valid paths: {}",
            valid_names()
        )))
    }
}

/// Resolves a path name for a layer kind. `Ok(None)` means the path exists
/// but has no variant for this kind (e.g. `decomposed` on a dilated layer).
pub fn resolve(name: &str, kind: LayerKind) -> Result<Option<PathKind>, CliError> {
    check_name(name)?;
    let path = match (name, kind) {
        ("naive", LayerKind::Transpose) => PathKind::NaiveZeroInsert,
        ("naive", LayerKind::Dilated) => PathKind::DilatedNaive,
        ("naive", LayerKind::WeightGrad) => PathKind::GradNaive,
        ("untangled", LayerKind::Transpose) => PathKind::Untangled,
        ("untangled", LayerKind::Dilated) => PathKind::DilatedUntangled,
        ("untangled", LayerKind::WeightGrad) => PathKind::GradUntangled,
        ("decomposed", LayerKind::Transpose) => PathKind::Decomposed,
        ("decomposed", _) => return Ok(None),
        (full, _) => full.parse().expect("checked above"),
    };
    Ok((kind_of(path) == kind).then_some(path))
}

pub fn kind_of(path: PathKind) -> LayerKind {
    match path {
        PathKind::NaiveZeroInsert | PathKind::Decomposed | PathKind::Untangled => {
            LayerKind::Transpose
        }
        PathKind::DilatedNaive | PathKind::DilatedUntangled => LayerKind::Dilated,
        PathKind::GradNaive | PathKind::GradUntangled => LayerKind::WeightGrad,
    }
}

/// Concrete operands of one layer.
#[derive(Debug, Clone)]
pub enum Operands {
    Transpose {
        input: Tensor3,
        kernel: Kernel4,
        cfg: DeconvConfig,
    },
    Dilated {
        input: Tensor3,
        kernel: Kernel4,
        cfg: DilationConfig,
        pad: (usize, usize),
    },
    Grad {
        input: Tensor3,
        upstream: Tensor3,
        stride: (usize, usize),
        pad: (usize, usize),
        kernel_dims: [usize; 4],
    },
}

impl Operands {
    /// Random operands in `[0, 1)` for a layer, so output sums are well
    /// conditioned for cross-path checksums.
    pub fn random(layer: &LayerSpec, seed: u64) -> Result<Self, CliError> {
        let geometry = layer.geometry()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [h, w, c] = layer.input;
        let [r, s, _, n] = layer.kernel;
        let mut fill = |len: usize| -> Vec<f32> { (0..len).map(|_| rng.gen::<f32>()).collect() };
        let input = Tensor3::from_vec(h, w, c, fill(h * w * c))?;
        Ok(match layer.kind {
            LayerKind::Transpose => Operands::Transpose {
                input,
                kernel: Kernel4::from_vec(r, s, c, n, fill(r * s * c * n))?,
                cfg: geometry.deconv_config()?,
            },
            LayerKind::Dilated => Operands::Dilated {
                input,
                kernel: Kernel4::from_vec(r, s, c, n, fill(r * s * c * n))?,
                cfg: geometry.dilation_config()?,
                pad: layer.pad,
            },
            LayerKind::WeightGrad => {
                let oh = (h + 2 * layer.pad.0 - r) / layer.stride.0 + 1;
                let ow = (w + 2 * layer.pad.1 - s) / layer.stride.1 + 1;
                Operands::Grad {
                    input,
                    upstream: Tensor3::from_vec(oh, ow, n, fill(oh * ow * n))?,
                    stride: layer.stride,
                    pad: layer.pad,
                    kernel_dims: layer.kernel,
                }
            }
        })
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Operands::Transpose { .. } => LayerKind::Transpose,
            Operands::Dilated { .. } => LayerKind::Dilated,
            Operands::Grad { .. } => LayerKind::WeightGrad,
        }
    }

    pub fn geometry(&self) -> Geometry {
        match self {
            Operands::Transpose { input, kernel, cfg } => {
                Geometry::transpose(input.dims(), kernel.dims(), cfg)
            }
            Operands::Dilated {
                input,
                kernel,
                cfg,
                pad,
            } => Geometry::dilated(input.dims(), kernel.dims(), cfg, *pad),
            Operands::Grad {
                input,
                stride,
                pad,
                kernel_dims,
                ..
            } => Geometry::grad(input.dims(), *kernel_dims, *stride, *pad),
        }
    }
}

/// Runs one path. With `threads > 1` the decomposed and untangled transposed
/// paths process stride patterns concurrently; the result is bit-identical to
/// the single-threaded run because each pattern is computed independently and
/// combined in a fixed order. Other paths ignore `threads`.
pub fn execute(path: PathKind, ops: &Operands, threads: usize) -> Result<Stored, CliError> {
    if kind_of(path) != ops.kind() {
        return Err(CliError::Usage(format!(
            "path {path} does not apply to {} operands",
            ops.kind()
        )));
    }
    let out = match (path, ops) {
        (PathKind::NaiveZeroInsert, Operands::Transpose { input, kernel, cfg }) => {
            Stored::Tensor(conv2d_transpose_via_zero_insertion(input, kernel, cfg)?)
        }
        (PathKind::Decomposed, Operands::Transpose { input, kernel, cfg }) if threads > 1 => {
            Stored::Tensor(parallel_patterns(
                input,
                kernel,
                cfg,
                threads,
                conv_pattern,
            )?)
        }
        (PathKind::Decomposed, Operands::Transpose { input, kernel, cfg }) => {
            Stored::Tensor(conv2d_transpose_decomposed(input, kernel, cfg)?)
        }
        (PathKind::Untangled, Operands::Transpose { input, kernel, cfg }) if threads > 1 => {
            Stored::Tensor(parallel_patterns(
                input,
                kernel,
                cfg,
                threads,
                untangle_pattern,
            )?)
        }
        (PathKind::Untangled, Operands::Transpose { input, kernel, cfg }) => {
            Stored::Tensor(conv2d_transpose_untangled(input, kernel, cfg)?)
        }
        (
            PathKind::DilatedNaive,
            Operands::Dilated {
                input,
                kernel,
                cfg,
                pad,
            },
        ) => Stored::Tensor(conv2d_dilated_via_spread_kernel(
            input, kernel, cfg, pad.0, pad.1,
        )?),
        (
            PathKind::DilatedUntangled,
            Operands::Dilated {
                input,
                kernel,
                cfg,
                pad,
            },
        ) => Stored::Tensor(conv2d_dilated_untangled(input, kernel, cfg, pad.0, pad.1)?),
        (
            PathKind::GradNaive | PathKind::GradUntangled,
            Operands::Grad {
                input,
                upstream,
                stride,
                pad,
                kernel_dims,
            },
        ) => {
            let gi = GradInstance {
                input,
                upstream_grad: upstream,
                stride: *stride,
                pad: *pad,
                kernel_dims: *kernel_dims,
            };
            Stored::Kernel(if path == PathKind::GradNaive {
                discriminator_weight_grad(&gi)?
            } else {
                weight_grad_untangled(&gi)?
            })
        }
        _ => unreachable!("kind checked above"),
    };
    Ok(out)
}

type PatternFn = fn(&Tensor3, &SubKernel, &DeconvConfig) -> huge2_core::Result<Partial>;

fn parallel_patterns(
    input: &Tensor3,
    kernel: &Kernel4,
    cfg: &DeconvConfig,
    threads: usize,
    run: PatternFn,
) -> Result<Tensor3, huge2_core::Error> {
    let (oh, ow) = cfg.output_dims(input.dims(), kernel.dims())?;
    let set = decompose_kernel(kernel, cfg)?;
    let workers = threads.min(set.len()).max(1);
    let mut slots: Vec<Option<huge2_core::Result<Partial>>> =
        (0..set.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|t| {
                let set = &set;
                scope.spawn(move || {
                    (t..set.len())
                        .step_by(workers)
                        .map(|i| (i, run(input, &set.patterns[i], cfg)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("pattern worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    let partials = slots
        .into_iter()
        .map(|s| s.expect("every pattern assigned"))
        .collect::<huge2_core::Result<Vec<_>>>()?;
    scatter_combine(&partials, &set, [oh, ow, kernel.out_channels()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::preset;

    #[test]
    fn resolution() {
        assert_eq!(
            resolve("naive", LayerKind::Transpose).unwrap(),
            Some(PathKind::NaiveZeroInsert)
        );
        assert_eq!(
            resolve("untangled", LayerKind::Dilated).unwrap(),
            Some(PathKind::DilatedUntangled)
        );
        assert_eq!(resolve("decomposed", LayerKind::WeightGrad).unwrap(), None);
        assert_eq!(resolve("grad_naive", LayerKind::Transpose).unwrap(), None);
        let err = resolve("fast", LayerKind::Transpose)
            .unwrap_err()
            .to_string();
        assert!(
            err.contains("valid paths: naive, decomposed, untangled"),
            "{err}"
        );
    }

    #[test]
    fn threads_do_not_change_bits() {
        let layer = &preset("dcgan_desk").unwrap()[1];
        let ops = Operands::random(layer, 9).unwrap();
        for path in [PathKind::Decomposed, PathKind::Untangled] {
            let one = execute(path, &ops, 1).unwrap();
            for threads in [2, 3, 8] {
                assert_eq!(execute(path, &ops, threads).unwrap(), one);
            }
        }
    }
}
