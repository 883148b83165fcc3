//! Brute-force f64 oracles, written directly from the operator definitions and
//! sharing no code with the library paths they check.

#![allow(dead_code)]

use huge2_core::{Kernel4, Tensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Tensor3 {
    let data = (0..h * w * c)
        .map(|_| rng.gen_range(-1.0f32..1.0))
        .collect();
    Tensor3::from_vec(h, w, c, data).unwrap()
}

pub fn random_kernel(rng: &mut ChaCha8Rng, r: usize, s: usize, c: usize, n: usize) -> Kernel4 {
    let data = (0..r * s * c * n)
        .map(|_| rng.gen_range(-1.0f32..1.0))
        .collect();
    Kernel4::from_vec(r, s, c, n, data).unwrap()
}

/// Dense f64 result with explicit dims.
#[derive(Debug, Clone)]
pub struct Dense {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    pub fn at(&self, y: usize, x: usize, k: usize) -> f64 {
        self.data[(y * self.w + x) * self.c + k]
    }

    fn at_mut(&mut self, y: usize, x: usize, k: usize) -> &mut f64 {
        &mut self.data[(y * self.w + x) * self.c + k]
    }

    /// Elementwise `|got - self| <= atol + rtol * |self|`, returning the worst
    /// absolute error on success.
    pub fn check(&self, got: &Tensor3, atol: f64, rtol: f64) -> Result<f64, String> {
        if got.dims() != [self.h, self.w, self.c] {
            return Err(format!(
                "shape {:?} != {:?}",
                got.dims(),
                [self.h, self.w, self.c]
            ));
        }
        let mut worst = 0.0f64;
        for (i, (&g, &e)) in got.data().iter().zip(&self.data).enumerate() {
            let err = (g as f64 - e).abs();
            worst = worst.max(err);
            if err > atol + rtol * e.abs() {
                return Err(format!("element {i}: got {g}, expected {e}"));
            }
        }
        Ok(worst)
    }
}

fn sample(t: &Tensor3, y: isize, x: isize, c: usize) -> f64 {
    if y < 0 || x < 0 || y >= t.height() as isize || x >= t.width() as isize {
        0.0
    } else {
        t.get(y as usize, x as usize, c) as f64
    }
}

/// Padded strided dilated cross-correlation, straight from the sum.
pub fn correlation(
    input: &Tensor3,
    kernel: &Kernel4,
    stride: (usize, usize),
    pad: (usize, usize),
    dil: (usize, usize),
) -> Dense {
    let [h, w, c] = input.dims();
    let [r, s, _, n] = kernel.dims();
    let oh = (h + 2 * pad.0 - ((r - 1) * dil.0 + 1)) / stride.0 + 1;
    let ow = (w + 2 * pad.1 - ((s - 1) * dil.1 + 1)) / stride.1 + 1;
    let mut out = Dense::zeros(oh, ow, n);
    for y in 0..oh {
        for x in 0..ow {
            for k in 0..n {
                let mut acc = 0.0;
                for m in 0..r {
                    for q in 0..s {
                        for ci in 0..c {
                            let iy = (y * stride.0 + m * dil.0) as isize - pad.0 as isize;
                            let ix = (x * stride.1 + q * dil.1) as isize - pad.1 as isize;
                            acc += sample(input, iy, ix, ci) * kernel.get(m, q, ci, k) as f64;
                        }
                    }
                }
                *out.at_mut(y, x, k) = acc;
            }
        }
    }
    out
}

/// Transposed convolution in gather form: output `(y, x)` collects every
/// `(h, m)` with `s*h + m - p == y` (and likewise for columns).
pub fn transpose(
    input: &Tensor3,
    kernel: &Kernel4,
    stride: (usize, usize),
    pad: (usize, usize),
    out_pad: (usize, usize),
) -> Dense {
    let [h, w, c] = input.dims();
    let [r, s, _, n] = kernel.dims();
    let oh = stride.0 * (h - 1) + r + out_pad.0 - 2 * pad.0;
    let ow = stride.1 * (w - 1) + s + out_pad.1 - 2 * pad.1;
    let mut out = Dense::zeros(oh, ow, n);
    for y in 0..oh {
        for x in 0..ow {
            for m in 0..r {
                let num = y as isize + pad.0 as isize - m as isize;
                if num < 0 || num % stride.0 as isize != 0 || num / stride.0 as isize >= h as isize
                {
                    continue;
                }
                let iy = (num / stride.0 as isize) as usize;
                for q in 0..s {
                    let num = x as isize + pad.1 as isize - q as isize;
                    if num < 0
                        || num % stride.1 as isize != 0
                        || num / stride.1 as isize >= w as isize
                    {
                        continue;
                    }
                    let ix = (num / stride.1 as isize) as usize;
                    for ci in 0..c {
                        for k in 0..n {
                            *out.at_mut(y, x, k) +=
                                input.get(iy, ix, ci) as f64 * kernel.get(m, q, ci, k) as f64;
                        }
                    }
                }
            }
        }
    }
    out
}

/// `1/2 * || conv(I, K) - T ||^2` evaluated in f64.
pub fn half_squared_loss(
    input: &Tensor3,
    kernel: &Kernel4,
    target: &Dense,
    stride: (usize, usize),
    pad: (usize, usize),
) -> f64 {
    let out = correlation(input, kernel, stride, pad, (1, 1));
    out.data
        .iter()
        .zip(&target.data)
        .map(|(o, t)| 0.5 * (o - t) * (o - t))
        .sum()
}

/// Central finite differences of [`half_squared_loss`] with respect to every
/// kernel entry, in the kernel's flat order.
pub fn finite_difference_grad(
    input: &Tensor3,
    kernel: &Kernel4,
    target: &Dense,
    stride: (usize, usize),
    pad: (usize, usize),
    step: f32,
) -> Vec<f64> {
    let mut grads = Vec::with_capacity(kernel.data().len());
    for i in 0..kernel.data().len() {
        let mut plus = kernel.clone();
        plus.data_mut()[i] += step;
        let mut minus = kernel.clone();
        minus.data_mut()[i] -= step;
        // Use the actually representable perturbation.
        let width = plus.data()[i] as f64 - minus.data()[i] as f64;
        let lp = half_squared_loss(input, &plus, target, stride, pad);
        let lm = half_squared_loss(input, &minus, target, stride, pad);
        grads.push((lp - lm) / width);
    }
    grads
}

/// Number of products in the zero-insertion path whose input operand sits on
/// the stride lattice (a real sample or a lattice point of the border), i.e.
/// is not an inserted zero.
pub fn lattice_products(
    input: [usize; 3],
    kernel: [usize; 4],
    stride: (usize, usize),
    pad: (usize, usize),
    out_pad: (usize, usize),
) -> u64 {
    let [h, w, c] = input;
    let [r, s, _, n] = kernel;
    let oh = stride.0 * (h - 1) + r + out_pad.0 - 2 * pad.0;
    let ow = stride.1 * (w - 1) + s + out_pad.1 - 2 * pad.1;
    let axis = |out: usize, k: usize, st: usize, p: usize| -> u64 {
        let lead = k as isize - 1 - p as isize;
        let mut count = 0;
        for y in 0..out {
            for m in 0..k {
                // Padded zero-inserted coordinate y + m maps to spread coordinate y + m - lead.
                let spread = y as isize + m as isize - lead;
                if spread.rem_euclid(st as isize) == 0 {
                    count += 1;
                }
            }
        }
        count
    };
    axis(oh, r, stride.0, pad.0) * axis(ow, s, stride.1, pad.1) * (c * n) as u64
}
