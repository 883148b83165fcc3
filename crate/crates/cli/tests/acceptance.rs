//! Acceptance checks. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits nonzero if any fails.

use std::process::Command;
use std::time::{Duration, Instant};

use huge2::layers::preset;
use huge2::verify::cases;
use huge2_core::{
    conv2d_dilated, conv2d_dilated_untangled, conv2d_transpose_decomposed,
    conv2d_transpose_decomposed_with_probe, conv2d_transpose_reference, conv2d_transpose_untangled,
    conv2d_transpose_via_zero_insertion, conv2d_transpose_via_zero_insertion_with_probe,
    count_path, decompose_kernel, discriminator_weight_grad, reduction_ratio,
    weight_grad_untangled, CountingProbe, DeconvConfig, Geometry, GradInstance, Kernel4, PathKind,
    Tensor3,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const ATOL: f64 = 1e-5;

type TransposeFn = fn(&Tensor3, &Kernel4, &DeconvConfig) -> huge2_core::Result<Tensor3>;
const RTOL: f64 = 1e-5;

struct Verdict {
    passed: bool,
    detail: String,
}

fn pass(detail: String) -> Verdict {
    Verdict {
        passed: true,
        detail,
    }
}

fn fail(detail: String) -> Verdict {
    Verdict {
        passed: false,
        detail,
    }
}

/// Worst `|got - want|` and whether all elements are within
/// `atol + rtol * |want|`.
fn close(got: &[f32], want: &[f32], atol: f64, rtol: f64) -> (f64, bool) {
    assert_eq!(got.len(), want.len());
    got.iter()
        .zip(want)
        .fold((0.0, true), |(worst, ok), (&g, &w)| {
            let e = (g as f64 - w as f64).abs();
            (worst.max(e), ok && e <= atol + rtol * (w as f64).abs())
        })
}

fn oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut worst = 0.0f64;
    for trial in 0..200 {
        let c = cases::transpose(&mut rng);
        let reference = conv2d_transpose_reference(&c.input, &c.kernel, &c.cfg).unwrap();
        let paths: [(&str, TransposeFn); 3] = [
            ("decomposed", conv2d_transpose_decomposed),
            ("untangled", conv2d_transpose_untangled),
            ("zero_insertion", conv2d_transpose_via_zero_insertion),
        ];
        for (name, path) in paths {
            let got = match path(&c.input, &c.kernel, &c.cfg) {
                Ok(t) => t,
                Err(e) => return fail(format!("trial {trial}: {name} errored: {e}")),
            };
            if got.dims() != reference.dims() {
                return fail(format!(
                    "trial {trial}: {name} shape {:?} != {:?}",
                    got.dims(),
                    reference.dims()
                ));
            }
            let (w, ok) = close(got.data(), reference.data(), ATOL, RTOL);
            worst = worst.max(w);
            if !ok {
                return fail(format!(
                    "trial {trial}: {name} off by {w:.3e} on {:?}",
                    c.cfg
                ));
            }
        }
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "200 geometries x 3 paths, worst abs err {worst:.3e}, {:.2}s",
        elapsed.as_secs_f64()
    );
    if elapsed < Duration::from_secs(60) {
        pass(detail)
    } else {
        fail(format!("{detail} exceeds 60s"))
    }
}

fn dilated_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    let mut worst = 0.0f64;
    let mut dilations = [false; 4];
    for trial in 0..100 {
        let c = cases::dilated(&mut rng);
        dilations[c.cfg.dil_h] = true;
        dilations[c.cfg.dil_w] = true;
        let want = conv2d_dilated(&c.input, &c.kernel, &c.cfg, c.pad.0, c.pad.1).unwrap();
        let got = conv2d_dilated_untangled(&c.input, &c.kernel, &c.cfg, c.pad.0, c.pad.1).unwrap();
        let (w, ok) = close(got.data(), want.data(), ATOL, RTOL);
        worst = worst.max(w);
        if !ok || got.dims() != want.dims() {
            return fail(format!("trial {trial}: off by {w:.3e} on {:?}", c.cfg));
        }
    }
    if dilations[1..] != [true; 3] {
        return fail("dilations 1, 2 and 3 were not all exercised".into());
    }
    pass(format!(
        "100 geometries, dilation 1..3, worst abs err {worst:.3e}"
    ))
}

/// Forward strided convolution in f64.
fn forward(c: &cases::Grad, kernel: &Kernel4) -> Vec<f64> {
    let [h, w, ch] = c.input.dims();
    let [r, s, _, n] = kernel.dims();
    let [oh, ow, _] = c.output_dims();
    let mut out = vec![0.0; oh * ow * n];
    for y in 0..oh {
        for x in 0..ow {
            for k in 0..n {
                let mut acc = 0.0;
                for m in 0..r {
                    for q in 0..s {
                        let iy = (y * c.stride.0 + m) as isize - c.pad.0 as isize;
                        let ix = (x * c.stride.1 + q) as isize - c.pad.1 as isize;
                        if iy >= 0 && ix >= 0 && iy < h as isize && ix < w as isize {
                            for ci in 0..ch {
                                acc += c.input.get(iy as usize, ix as usize, ci) as f64
                                    * kernel.get(m, q, ci, k) as f64;
                            }
                        }
                    }
                }
                out[(y * ow + x) * n + k] = acc;
            }
        }
    }
    out
}

fn loss(c: &cases::Grad, kernel: &Kernel4) -> f64 {
    forward(c, kernel)
        .iter()
        .zip(c.target.data())
        .map(|(o, &t)| 0.5 * (o - t as f64).powi(2))
        .sum()
}

fn gradient_check() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1003);
    let (mut worst_fd, mut worst_pair) = (0.0f64, 0.0f64);
    for trial in 0..20 {
        let c = cases::grad(&mut rng);
        let [oh, ow, n] = c.output_dims();
        let residual: Vec<f32> = forward(&c, &c.kernel)
            .iter()
            .zip(c.target.data())
            .map(|(o, &t)| (o - t as f64) as f32)
            .collect();
        let g = Tensor3::from_vec(oh, ow, n, residual).unwrap();
        let gi = GradInstance {
            input: &c.input,
            upstream_grad: &g,
            stride: c.stride,
            pad: c.pad,
            kernel_dims: c.kernel.dims(),
        };
        let naive = discriminator_weight_grad(&gi).unwrap();
        let fast = weight_grad_untangled(&gi).unwrap();
        let fd: Vec<f32> = (0..c.kernel.data().len())
            .map(|i| {
                let mut plus = c.kernel.clone();
                plus.data_mut()[i] += 1e-3;
                let mut minus = c.kernel.clone();
                minus.data_mut()[i] -= 1e-3;
                let width = plus.data()[i] as f64 - minus.data()[i] as f64;
                ((loss(&c, &plus) - loss(&c, &minus)) / width) as f32
            })
            .collect();
        for (name, dk) in [
            ("discriminator_weight_grad", &naive),
            ("weight_grad_untangled", &fast),
        ] {
            let (w, ok) = close(dk.data(), &fd, 1e-3, 0.0);
            worst_fd = worst_fd.max(w);
            if !ok {
                return fail(format!(
                    "trial {trial}: {name} differs from finite differences by {w:.3e}"
                ));
            }
        }
        let (w, ok) = close(fast.data(), naive.data(), 1e-5, 0.0);
        worst_pair = worst_pair.max(w);
        if !ok {
            return fail(format!("trial {trial}: gradient paths differ by {w:.3e}"));
        }
    }
    pass(format!(
        "20 instances, worst FD err {worst_fd:.3e} (tol 1e-3), worst path gap {worst_pair:.3e} (tol 1e-5)"
    ))
}

fn mac_law() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1004);
    let mut geometries: Vec<Geometry> = (0..200).map(|_| cases::aligned(&mut rng)).collect();
    for name in ["dcgan", "cgan", "dcgan_desk", "cgan_desk"] {
        geometries.extend(preset(name).unwrap().iter().map(|l| l.geometry().unwrap()));
    }
    let mut executed = 0;
    for g in &geometries {
        let naive = count_path(PathKind::NaiveZeroInsert, g).unwrap();
        let dec = count_path(PathKind::Decomposed, g).unwrap();
        let scale = (g.stride.0 * g.stride.1) as u64;
        if dec.macs * scale != naive.macs {
            return fail(format!("{g:?}: {} x {scale} != {}", dec.macs, naive.macs));
        }
        // Small instances: the executed MAC counts must equal the model.
        if g.input[2] * g.kernel[3] <= 64 && g.input[0] * g.input[1] <= 256 {
            let mut r = ChaCha8Rng::seed_from_u64(executed);
            let input = cases::tensor(&mut r, g.input[0], g.input[1], g.input[2]);
            let [kr, ks, kc, kn] = g.kernel;
            let kernel = cases::kernel(&mut r, kr, ks, kc, kn);
            let cfg = g.deconv_config().unwrap();
            let (mut pn, mut pd) = (CountingProbe::new(), CountingProbe::new());
            conv2d_transpose_via_zero_insertion_with_probe(&input, &kernel, &cfg, &mut pn).unwrap();
            conv2d_transpose_decomposed_with_probe(&input, &kernel, &cfg, &mut pd).unwrap();
            if pn.macs != naive.macs || pd.macs != dec.macs || pd.macs * scale != pn.macs {
                return fail(format!(
                    "{g:?}: executed {} / {} MACs, model {} / {}",
                    pn.macs, pd.macs, naive.macs, dec.macs
                ));
            }
            executed += 1;
        }
    }
    pass(format!(
        "{} aligned geometries (incl. all presets) exact; {executed} also executed with counting probes",
        geometries.len()
    ))
}

fn access_band() -> Vec<(String, Verdict)> {
    let layers = preset("dcgan_desk").unwrap();
    let ratios: Vec<(String, f64)> = layers
        .iter()
        .map(|l| {
            let g = l.geometry().unwrap();
            let naive = count_path(PathKind::NaiveZeroInsert, &g).unwrap();
            let untangled = count_path(PathKind::Untangled, &g).unwrap();
            (l.name.clone(), reduction_ratio(&naive, &untangled).unwrap())
        })
        .collect();
    let listing = ratios
        .iter()
        .map(|(n, r)| format!("{n}={r:.5}"))
        .collect::<Vec<_>>()
        .join(" ");
    let band = if ratios.iter().all(|(_, r)| (0.30..=0.90).contains(r)) {
        pass(format!("{listing}, all within [0.30, 0.90]"))
    } else {
        fail(format!("{listing}, outside [0.30, 0.90]"))
    };
    let get = |name: &str| ratios.iter().find(|(n, _)| n == name).unwrap().1;
    let (dc1, dc3, dc4) = (get("DC1"), get("DC3"), get("DC4"));
    let ordering = if dc3 >= dc1 && dc4 >= dc1 {
        pass(format!("DC3 {dc3:.5} and DC4 {dc4:.5} >= DC1 {dc1:.5}"))
    } else {
        fail(format!(
            "DC3 {dc3:.5}, DC4 {dc4:.5} vs DC1 {dc1:.5}: deeper layers have fewer channels, so the per-element \
             scatter writes weigh more against their MACs"
        ))
    };
    vec![
        ("5a access-reduction band".into(), band),
        ("5b deeper layers reduce more".into(), ordering),
    ]
}

fn desk_speedup() -> Verdict {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("dcgan_desk.csv");
    let o = Command::new(env!("CARGO_BIN_EXE_huge2"))
        .args([
            "bench",
            "dcgan_desk",
            "--repeat",
            "11",
            "--threads",
            "1",
            "--out",
        ])
        .arg(&out)
        .output()
        .unwrap();
    if !o.status.success() {
        return fail(format!(
            "bench exited with {:?}: {}",
            o.status.code(),
            String::from_utf8_lossy(&o.stderr)
        ));
    }
    let mut reader = csv::Reader::from_path(&out).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    let layers = preset("dcgan_desk").unwrap();
    let mut parts = Vec::new();
    let mut ok = true;
    for l in layers
        .iter()
        .filter(|l| l.kernel[..2] == [5, 5] && l.stride == (2, 2))
    {
        let median = |path: &str| -> f64 {
            rows.iter()
                .find(|r| &r[0] == l.name.as_str() && &r[1] == path)
                .map(|r| r[2].parse().unwrap())
                .unwrap()
        };
        let derived: f64 = rows
            .iter()
            .find(|r| &r[0] == l.name.as_str() && &r[1] == "untangled_vs_naive")
            .map(|r| r[10].parse().unwrap())
            .unwrap();
        let recomputed = median("naive_zero_insert") / median("untangled");
        ok &= derived >= 2.0 && (derived - recomputed).abs() <= 1e-9 * recomputed;
        parts.push(format!("{}={derived:.2}x", l.name));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(300) && parts.len() == 4;
    let detail = format!(
        "untangled vs naive {}, {:.1}s",
        parts.join(" "),
        elapsed.as_secs_f64()
    );
    if ok {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn write_once() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1007);
    let mut elements = 0;
    for trial in 0..50 {
        let c = cases::transpose(&mut rng);
        let (oh, ow) = c.cfg.output_dims(c.input.dims(), c.kernel.dims()).unwrap();
        let n = c.kernel.out_channels();
        let set = decompose_kernel(&c.kernel, &c.cfg).unwrap();
        let mut probe = CountingProbe::tracking(oh * ow * n);
        conv2d_transpose_decomposed_with_probe(&c.input, &c.kernel, &c.cfg, &mut probe).unwrap();
        if !probe.write_once() {
            return fail(format!(
                "trial {trial}: an element was written zero or several times ({:?})",
                c.cfg
            ));
        }
        for (idx, &p) in probe.writers().iter().enumerate() {
            let (y, x) = (idx / n / ow, idx / n % ow);
            let sub = &set.patterns[p];
            if (sub.residue_h, sub.residue_w) != (y % c.cfg.stride_h, x % c.cfg.stride_w) {
                return fail(format!(
                    "trial {trial}: element ({y},{x}) written by pattern {p} of the wrong phase"
                ));
            }
        }
        elements += oh * ow * n;
    }
    pass(format!(
        "50 geometries, {elements} output elements each written once by their own phase"
    ))
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1008);
    let input = dir.path().join("input.hug2");
    let kernel = dir.path().join("kernel.hug2");
    huge2::format::save_tensor(&cases::tensor(&mut rng, 16, 16, 16), &input).unwrap();
    huge2::format::save_kernel(&cases::kernel(&mut rng, 5, 5, 16, 8), &kernel).unwrap();
    for path in ["naive", "decomposed", "untangled"] {
        let mut outputs = Vec::new();
        for run in 0..2 {
            let out = dir.path().join(format!("{path}-{run}.hug2"));
            let o = Command::new(env!("CARGO_BIN_EXE_huge2"))
                .args([
                    "run",
                    "--kind",
                    "transpose",
                    "--stride",
                    "2,2",
                    "--pad",
                    "2,2",
                    "--out-pad",
                    "1,1",
                ])
                .args(["--path", path, "--threads", "1", "--input"])
                .arg(&input)
                .arg("--kernel")
                .arg(&kernel)
                .arg("--out")
                .arg(&out)
                .output()
                .unwrap();
            if !o.status.success() {
                return fail(format!(
                    "run {path} failed: {}",
                    String::from_utf8_lossy(&o.stderr)
                ));
            }
            outputs.push(std::fs::read(&out).unwrap());
        }
        if outputs[0] != outputs[1] {
            return fail(format!("two runs of {path} produced different bytes"));
        }
    }
    pass("naive, decomposed and untangled each produced bit-identical files across two runs".into())
}

fn main() {
    let mut verdicts: Vec<(String, Verdict)> = vec![
        ("1 oracle equivalence".into(), oracle_equivalence()),
        ("2 dilated equivalence".into(), dilated_equivalence()),
        ("3 gradient check".into(), gradient_check()),
        ("4 zero-skipping MAC law".into(), mac_law()),
    ];
    verdicts.extend(access_band());
    verdicts.push(("6 desk-scale speedup".into(), desk_speedup()));
    verdicts.push(("7 write-once partition".into(), write_once()));
    verdicts.push(("8 determinism".into(), determinism()));

    let mut failed = 0;
    for (name, v) in &verdicts {
        println!(
            "acceptance {name}: {} ({})",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail
        );
        failed += usize::from(!v.passed);
    }
    println!(
        "acceptance summary: {} passed, {failed} failed",
        verdicts.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
