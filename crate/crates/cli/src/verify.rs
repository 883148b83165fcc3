//! Randomized self-checks: every optimized path against the naive kernels,
//! the write-once partition of the scatter step, weight gradients against
//! finite differences, and the access model against executed counts.

use std::fmt;

use huge2_core::{
    conv2d_dilated, conv2d_dilated_untangled, conv2d_dilated_untangled_with_probe,
    conv2d_dilated_via_spread_kernel_with_probe, conv2d_transpose_decomposed,
    conv2d_transpose_decomposed_with_probe, conv2d_transpose_reference, conv2d_transpose_untangled,
    conv2d_transpose_untangled_with_probe, conv2d_transpose_via_zero_insertion,
    conv2d_transpose_via_zero_insertion_with_probe, count_path, decompose_kernel,
    discriminator_weight_grad, discriminator_weight_grad_with_probe, weight_grad_untangled,
    weight_grad_untangled_with_probe, CountingProbe, DeconvConfig, DilationConfig, Geometry,
    GradInstance, Kernel4, PathKind, Tensor3,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::CliError;

pub const ATOL: f64 = 1e-5;
pub const RTOL: f64 = 1e-5;
pub const FD_STEP: f32 = 1e-3;
pub const FD_TOL: f64 = 1e-3;

type TransposeFn = fn(&Tensor3, &Kernel4, &DeconvConfig) -> huge2_core::Result<Tensor3>;
type DilatedFn =
    fn(&Tensor3, &Kernel4, &DilationConfig, usize, usize) -> huge2_core::Result<Tensor3>;
type GradFn = fn(&GradInstance<'_>) -> huge2_core::Result<Kernel4>;

/// The kernels under test. Tests swap entries to check that the verifier
/// catches a broken implementation.
#[derive(Clone, Copy)]
pub struct Kernels {
    pub emulation: TransposeFn,
    pub decomposed: TransposeFn,
    pub untangled: TransposeFn,
    pub dilated_untangled: DilatedFn,
    pub weight_grad: GradFn,
    pub weight_grad_untangled: GradFn,
}

impl Default for Kernels {
    fn default() -> Self {
        Self {
            emulation: conv2d_transpose_via_zero_insertion,
            decomposed: conv2d_transpose_decomposed,
            untangled: conv2d_transpose_untangled,
            dilated_untangled: conv2d_dilated_untangled,
            weight_grad: discriminator_weight_grad,
            weight_grad_untangled,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub name: &'static str,
    pub passed: bool,
    /// Largest absolute error seen (or number of violations for counting
    /// properties).
    pub worst: f64,
    pub trials: usize,
    pub detail: Option<String>,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<34} worst={:.3e} trials={}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.trials
        )?;
        if let Some(d) = &self.detail {
            write!(f, "  ({d})")?;
        }
        Ok(())
    }
}

pub mod cases {
    //! Random operand generators over the ranges the checks cover.

    use super::*;

    pub fn tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Tensor3 {
        let data = (0..h * w * c)
            .map(|_| rng.gen_range(-1.0f32..1.0))
            .collect();
        Tensor3::from_vec(h, w, c, data).expect("nonzero dims")
    }

    pub fn kernel(rng: &mut ChaCha8Rng, r: usize, s: usize, c: usize, n: usize) -> Kernel4 {
        let data = (0..r * s * c * n)
            .map(|_| rng.gen_range(-1.0f32..1.0))
            .collect();
        Kernel4::from_vec(r, s, c, n, data).expect("nonzero dims")
    }

    #[derive(Debug, Clone)]
    pub struct Transpose {
        pub input: Tensor3,
        pub kernel: Kernel4,
        pub cfg: DeconvConfig,
    }

    /// `H, W in [1, 16]`, `C, N in [1, 8]`, `R, S in [1, 5]`, stride in
    /// `{1, 2, 3}`, pad in `[0, 2]`, `out_pad < stride`, per axis; invalid
    /// combinations (pad above `R - 1`, empty output) are redrawn.
    pub fn transpose(rng: &mut ChaCha8Rng) -> Transpose {
        loop {
            let h = rng.gen_range(1..=16);
            let w = rng.gen_range(1..=16);
            let c = rng.gen_range(1..=8);
            let n = rng.gen_range(1..=8);
            let r = rng.gen_range(1..=5);
            let s = rng.gen_range(1..=5);
            let stride = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let pad = (rng.gen_range(0..=2), rng.gen_range(0..=2));
            let out_pad = (rng.gen_range(0..stride.0), rng.gen_range(0..stride.1));
            let Ok(cfg) = DeconvConfig::new(stride, pad, out_pad) else {
                continue;
            };
            if cfg.output_dims([h, w, c], [r, s, c, n]).is_err() {
                continue;
            }
            return Transpose {
                input: tensor(rng, h, w, c),
                kernel: kernel(rng, r, s, c, n),
                cfg,
            };
        }
    }

    #[derive(Debug, Clone)]
    pub struct Dilated {
        pub input: Tensor3,
        pub kernel: Kernel4,
        pub cfg: DilationConfig,
        pub pad: (usize, usize),
    }

    /// Same ranges as [`transpose`] with dilation in `{1, 2, 3}`, stride in
    /// `{1, 2}`; kernels whose dilated extent exceeds the padded input are
    /// redrawn.
    pub fn dilated(rng: &mut ChaCha8Rng) -> Dilated {
        loop {
            let h = rng.gen_range(1..=16);
            let w = rng.gen_range(1..=16);
            let c = rng.gen_range(1..=8);
            let n = rng.gen_range(1..=8);
            let r = rng.gen_range(1..=5);
            let s = rng.gen_range(1..=5);
            let dil = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let stride = (rng.gen_range(1..=2), rng.gen_range(1..=2));
            let pad = (rng.gen_range(0..=2), rng.gen_range(0..=2));
            if (r - 1) * dil.0 + 1 > h + 2 * pad.0 || (s - 1) * dil.1 + 1 > w + 2 * pad.1 {
                continue;
            }
            return Dilated {
                input: tensor(rng, h, w, c),
                kernel: kernel(rng, r, s, c, n),
                cfg: DilationConfig::new(dil, stride).expect("nonzero"),
                pad,
            };
        }
    }

    #[derive(Debug, Clone)]
    pub struct Grad {
        pub input: Tensor3,
        pub kernel: Kernel4,
        pub target: Tensor3,
        pub stride: (usize, usize),
        pub pad: (usize, usize),
    }

    impl Grad {
        pub fn output_dims(&self) -> [usize; 3] {
            let [h, w, _] = self.input.dims();
            let [r, s, _, n] = self.kernel.dims();
            [
                (h + 2 * self.pad.0 - r) / self.stride.0 + 1,
                (w + 2 * self.pad.1 - s) / self.stride.1 + 1,
                n,
            ]
        }
    }

    /// Small forward convolutions: `H, W in [2, 7]`, `C, N in [1, 3]`,
    /// `R, S in [1, 3]`, stride in `{1, 2}`, pad in `[0, 1]`; kernels larger
    /// than the padded input are redrawn.
    pub fn grad(rng: &mut ChaCha8Rng) -> Grad {
        let (h, w, c, n, r, s, stride, pad) = loop {
            let h = rng.gen_range(2..=7);
            let w = rng.gen_range(2..=7);
            let r = rng.gen_range(1..=3);
            let s = rng.gen_range(1..=3);
            let pad = (rng.gen_range(0..=1), rng.gen_range(0..=1));
            if r <= h + 2 * pad.0 && s <= w + 2 * pad.1 {
                let stride = (rng.gen_range(1..=2), rng.gen_range(1..=2));
                break (
                    h,
                    w,
                    rng.gen_range(1..=3),
                    rng.gen_range(1..=3),
                    r,
                    s,
                    stride,
                    pad,
                );
            }
        };
        let input = tensor(rng, h, w, c);
        let kernel = kernel(rng, r, s, c, n);
        let oh = (h + 2 * pad.0 - r) / stride.0 + 1;
        let ow = (w + 2 * pad.1 - s) / stride.1 + 1;
        let target = tensor(rng, oh, ow, n);
        Grad {
            input,
            kernel,
            target,
            stride,
            pad,
        }
    }

    /// A transposed geometry with `H_out == stride * H` on both axes, i.e.
    /// `R - 2 * pad + out_pad == stride`.
    pub fn aligned(rng: &mut ChaCha8Rng) -> Geometry {
        let axis = |rng: &mut ChaCha8Rng| loop {
            let s = rng.gen_range(1..=3);
            let r = rng.gen_range(1..=5);
            let p = rng.gen_range(0..=2);
            let op = rng.gen_range(0..s);
            if p < r && r + op == s + 2 * p {
                return (s, r, p, op);
            }
        };
        let (sm, r, ph, oh) = axis(rng);
        let (sn, s, pw, ow) = axis(rng);
        let input = [
            rng.gen_range(1..=16),
            rng.gen_range(1..=16),
            rng.gen_range(1..=8),
        ];
        let kernel = [r, s, input[2], rng.gen_range(1..=8)];
        let cfg = DeconvConfig::new((sm, sn), (ph, pw), (oh, ow)).expect("valid");
        Geometry::transpose(input, kernel, &cfg)
    }
}

/// Worst absolute error, and whether every element satisfies
/// `|got - want| <= atol + rtol * |want|`.
pub fn compare(got: &[f32], want: &[f32], atol: f64, rtol: f64) -> (f64, bool) {
    if got.len() != want.len() {
        return (f64::INFINITY, false);
    }
    got.iter()
        .zip(want)
        .fold((0.0, true), |(worst, ok), (&g, &w)| {
            let err = (g as f64 - w as f64).abs();
            (worst.max(err), ok && err <= atol + rtol * (w as f64).abs())
        })
}

struct Tally {
    name: &'static str,
    worst: f64,
    trials: usize,
    failure: Option<String>,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            worst: 0.0,
            trials: 0,
            failure: None,
        }
    }

    fn record(&mut self, worst: f64, ok: bool, what: impl FnOnce() -> String) {
        self.trials += 1;
        self.worst = self.worst.max(worst);
        if !ok && self.failure.is_none() {
            self.failure = Some(what());
        }
    }

    fn error(&mut self, e: huge2_core::Error, what: impl FnOnce() -> String) {
        self.record(f64::INFINITY, false, || format!("{}: {e}", what()));
    }

    fn finish(self) -> Outcome {
        Outcome {
            name: self.name,
            passed: self.failure.is_none(),
            worst: self.worst,
            trials: self.trials,
            detail: self.failure,
        }
    }
}

fn describe_transpose(c: &cases::Transpose) -> String {
    format!(
        "input {:?} kernel {:?} stride {:?} pad {:?} out_pad {:?}",
        c.input.dims(),
        c.kernel.dims(),
        (c.cfg.stride_h, c.cfg.stride_w),
        (c.cfg.pad_h, c.cfg.pad_w),
        (c.cfg.out_pad_h, c.cfg.out_pad_w)
    )
}

fn check_transpose(
    tally: &mut Tally,
    case: &cases::Transpose,
    path: TransposeFn,
    reference: &Tensor3,
) {
    match path(&case.input, &case.kernel, &case.cfg) {
        Ok(got) => {
            let (worst, ok) = compare(got.data(), reference.data(), ATOL, RTOL);
            tally.record(worst, ok && got.dims() == reference.dims(), || {
                describe_transpose(case)
            });
        }
        Err(e) => tally.error(e, || describe_transpose(case)),
    }
}

/// `1/2 * || conv(I, K) - T ||^2` with the forward convolution in f64.
fn half_squared_loss(case: &cases::Grad, kernel: &Kernel4) -> f64 {
    let [h, w, c] = case.input.dims();
    let [r, s, _, n] = kernel.dims();
    let [oh, ow, _] = case.output_dims();
    let mut loss = 0.0;
    for y in 0..oh {
        for x in 0..ow {
            for k in 0..n {
                let mut acc = 0.0f64;
                for m in 0..r {
                    for q in 0..s {
                        let iy = (y * case.stride.0 + m) as isize - case.pad.0 as isize;
                        let ix = (x * case.stride.1 + q) as isize - case.pad.1 as isize;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        for ci in 0..c {
                            acc += case.input.get(iy as usize, ix as usize, ci) as f64
                                * kernel.get(m, q, ci, k) as f64;
                        }
                    }
                }
                let d = acc - case.target.get(y, x, k) as f64;
                loss += 0.5 * d * d;
            }
        }
    }
    loss
}

/// Upstream gradient `conv(I, K) - T` of the half squared loss, in f64 then
/// rounded to f32.
fn residual(case: &cases::Grad) -> Tensor3 {
    let [oh, ow, n] = case.output_dims();
    let mut g = Tensor3::zeros(oh, ow, n).expect("nonzero dims");
    let [h, w, c] = case.input.dims();
    let [r, s, _, _] = case.kernel.dims();
    for y in 0..oh {
        for x in 0..ow {
            for k in 0..n {
                let mut acc = 0.0f64;
                for m in 0..r {
                    for q in 0..s {
                        let iy = (y * case.stride.0 + m) as isize - case.pad.0 as isize;
                        let ix = (x * case.stride.1 + q) as isize - case.pad.1 as isize;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        for ci in 0..c {
                            acc += case.input.get(iy as usize, ix as usize, ci) as f64
                                * case.kernel.get(m, q, ci, k) as f64;
                        }
                    }
                }
                g.set(y, x, k, (acc - case.target.get(y, x, k) as f64) as f32);
            }
        }
    }
    g
}

fn finite_differences(case: &cases::Grad) -> Vec<f32> {
    (0..case.kernel.data().len())
        .map(|i| {
            let mut plus = case.kernel.clone();
            plus.data_mut()[i] += FD_STEP;
            let mut minus = case.kernel.clone();
            minus.data_mut()[i] -= FD_STEP;
            let width = plus.data()[i] as f64 - minus.data()[i] as f64;
            ((half_squared_loss(case, &plus) - half_squared_loss(case, &minus)) / width) as f32
        })
        .collect()
}

/// Executed MAC and write counts for `path` on the given operands.
fn observed(
    path: PathKind,
    g: &Geometry,
    input: &Tensor3,
    kernel: &Kernel4,
    upstream: Option<&Tensor3>,
) -> huge2_core::Result<(u64, u64)> {
    let mut p = CountingProbe::new();
    match path {
        PathKind::NaiveZeroInsert => {
            conv2d_transpose_via_zero_insertion_with_probe(
                input,
                kernel,
                &g.deconv_config()?,
                &mut p,
            )?;
        }
        PathKind::Decomposed => {
            conv2d_transpose_decomposed_with_probe(input, kernel, &g.deconv_config()?, &mut p)?;
        }
        PathKind::Untangled => {
            conv2d_transpose_untangled_with_probe(input, kernel, &g.deconv_config()?, &mut p)?;
        }
        PathKind::DilatedNaive => {
            conv2d_dilated_via_spread_kernel_with_probe(
                input,
                kernel,
                &g.dilation_config()?,
                g.pad.0,
                g.pad.1,
                &mut p,
            )?;
        }
        PathKind::DilatedUntangled => {
            conv2d_dilated_untangled_with_probe(
                input,
                kernel,
                &g.dilation_config()?,
                g.pad.0,
                g.pad.1,
                &mut p,
            )?;
        }
        PathKind::GradNaive | PathKind::GradUntangled => {
            let gi = GradInstance {
                input,
                upstream_grad: upstream.expect("gradient paths need an upstream gradient"),
                stride: g.stride,
                pad: g.pad,
                kernel_dims: kernel.dims(),
            };
            if path == PathKind::GradNaive {
                discriminator_weight_grad_with_probe(&gi, &mut p)?;
            } else {
                weight_grad_untangled_with_probe(&gi, &mut p)?;
            }
        }
    }
    Ok((p.macs, p.output_writes))
}

fn check_counts(
    tally: &mut Tally,
    path: PathKind,
    g: &Geometry,
    input: &Tensor3,
    kernel: &Kernel4,
    upstream: Option<&Tensor3>,
) {
    let result = observed(path, g, input, kernel, upstream)
        .and_then(|seen| Ok((seen, count_path(path, g)?)));
    match result {
        Ok(((macs, writes), model)) => {
            let ok = macs == model.macs && writes == model.output_writes;
            tally.record(if ok { 0.0 } else { 1.0 }, ok, || {
                format!(
                    "{path}: executed {macs} MACs / {writes} writes, model {} / {}",
                    model.macs, model.output_writes
                )
            });
        }
        Err(e) => tally.error(e, || format!("{path} on {g:?}")),
    }
}

/// Runs every property for `trials` random cases each.
pub fn run_verify(seed: u64, trials: usize, kernels: &Kernels) -> Result<Vec<Outcome>, CliError> {
    if trials == 0 {
        return Err(CliError::Usage("trials must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut emulation = Tally::new("emulation≡reference");
    let mut decomposed = Tally::new("decomposed≡reference");
    let mut untangled = Tally::new("untangled≡reference");
    let mut partition = Tally::new("write-once partition");
    let mut counters = Tally::new("counters≡model");
    for _ in 0..trials {
        let case = cases::transpose(&mut rng);
        let reference = conv2d_transpose_reference(&case.input, &case.kernel, &case.cfg)?;
        check_transpose(&mut emulation, &case, kernels.emulation, &reference);
        check_transpose(&mut decomposed, &case, kernels.decomposed, &reference);
        check_transpose(&mut untangled, &case, kernels.untangled, &reference);

        let set = decompose_kernel(&case.kernel, &case.cfg)?;
        let mut probe = CountingProbe::tracking(reference.len());
        conv2d_transpose_decomposed_with_probe(&case.input, &case.kernel, &case.cfg, &mut probe)?;
        let [_, ow, n] = reference.dims();
        let misplaced = probe
            .writers()
            .iter()
            .enumerate()
            .filter(|&(idx, &p)| {
                let (y, x) = (idx / n / ow, idx / n % ow);
                set.patterns.get(p).is_none_or(|sub| {
                    (sub.residue_h, sub.residue_w) != (y % set.stride_h, x % set.stride_w)
                })
            })
            .count();
        let violations = misplaced
            + probe
                .writes_per_element()
                .iter()
                .filter(|&&w| w != 1)
                .count();
        partition.record(violations as f64, violations == 0, || {
            format!(
                "{violations} elements not written exactly once by their phase; {}",
                describe_transpose(&case)
            )
        });

        let g = Geometry::transpose(case.input.dims(), case.kernel.dims(), &case.cfg);
        for path in [
            PathKind::NaiveZeroInsert,
            PathKind::Decomposed,
            PathKind::Untangled,
        ] {
            check_counts(&mut counters, path, &g, &case.input, &case.kernel, None);
        }
    }

    let mut dilated = Tally::new("dilated_untangled≡dilated");
    for _ in 0..trials {
        let case = cases::dilated(&mut rng);
        let reference =
            conv2d_dilated(&case.input, &case.kernel, &case.cfg, case.pad.0, case.pad.1)?;
        let describe = || {
            format!(
                "input {:?} kernel {:?} {:?} pad {:?}",
                case.input.dims(),
                case.kernel.dims(),
                case.cfg,
                case.pad
            )
        };
        match (kernels.dilated_untangled)(
            &case.input,
            &case.kernel,
            &case.cfg,
            case.pad.0,
            case.pad.1,
        ) {
            Ok(got) => {
                let (worst, ok) = compare(got.data(), reference.data(), ATOL, RTOL);
                dilated.record(worst, ok && got.dims() == reference.dims(), describe);
            }
            Err(e) => dilated.error(e, describe),
        }
        let g = Geometry::dilated(case.input.dims(), case.kernel.dims(), &case.cfg, case.pad);
        for path in [PathKind::DilatedNaive, PathKind::DilatedUntangled] {
            check_counts(&mut counters, path, &g, &case.input, &case.kernel, None);
        }
    }

    let mut fd = Tally::new("weight_grad≡finite_differences");
    let mut grads = Tally::new("weight_grad_untangled≡weight_grad");
    for _ in 0..trials {
        let case = cases::grad(&mut rng);
        let upstream = residual(&case);
        let gi = GradInstance {
            input: &case.input,
            upstream_grad: &upstream,
            stride: case.stride,
            pad: case.pad,
            kernel_dims: case.kernel.dims(),
        };
        let describe = || {
            format!(
                "input {:?} kernel {:?} stride {:?} pad {:?}",
                case.input.dims(),
                case.kernel.dims(),
                case.stride,
                case.pad
            )
        };
        let numeric = finite_differences(&case);
        let naive = (kernels.weight_grad)(&gi);
        match &naive {
            Ok(dk) => {
                let (worst, ok) = compare(dk.data(), &numeric, FD_TOL, 0.0);
                fd.record(worst, ok, describe);
            }
            Err(e) => fd.error(e.clone(), describe),
        }
        match ((kernels.weight_grad_untangled)(&gi), naive) {
            (Ok(fast), Ok(slow)) => {
                let (fd_worst, fd_ok) = compare(fast.data(), &numeric, FD_TOL, 0.0);
                fd.record(fd_worst, fd_ok, describe);
                let (worst, ok) = compare(fast.data(), slow.data(), ATOL, 0.0);
                grads.record(worst, ok, describe);
            }
            (Err(e), _) | (_, Err(e)) => grads.error(e, describe),
        }
        let g = Geometry::grad(case.input.dims(), case.kernel.dims(), case.stride, case.pad);
        for path in [PathKind::GradNaive, PathKind::GradUntangled] {
            check_counts(
                &mut counters,
                path,
                &g,
                &case.input,
                &case.kernel,
                Some(&upstream),
            );
        }
    }

    let mut law = Tally::new("zero-skipping MAC law");
    for _ in 0..trials {
        let g = cases::aligned(&mut rng);
        let naive = count_path(PathKind::NaiveZeroInsert, &g)?;
        let dec = count_path(PathKind::Decomposed, &g)?;
        let scale = (g.stride.0 * g.stride.1) as u64;
        let ok = dec.macs * scale == naive.macs;
        law.record(if ok { 0.0 } else { 1.0 }, ok, || {
            format!(
                "{g:?}: decomposed {} x {scale} != naive {}",
                dec.macs, naive.macs
            )
        });
    }

    Ok([
        emulation, decomposed, untangled, dilated, partition, fd, grads, counters, law,
    ]
    .into_iter()
    .map(Tally::finish)
    .collect())
}
