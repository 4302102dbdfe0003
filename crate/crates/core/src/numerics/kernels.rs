//! Raw slice kernels shared by the autodiff graph and the inference path.
//!
//! Feature maps are `[channels, batch, height, width]`. Every kernel computes
//! each batch element with the same sequence of floating point operations no
//! matter how many other elements share the call, so batching never changes
//! a result.

/// Upper bound on the im2col scratch buffer, in floats.
const COL_BUDGET: usize = 1 << 19;
/// Convolutions with fewer output channels skip GEMM.
const NARROW_OUTPUTS: usize = 4;
/// Preferred GEMM width; wider products fall out of cache.
const TARGET_COLUMNS: usize = 512;

/// Shape of a stride-1, zero-padded ("same") square convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
}

impl ConvGeometry {
    pub fn input_len(&self) -> usize {
        self.in_channels * self.batch * self.height * self.width
    }

    pub fn output_len(&self) -> usize {
        self.out_channels * self.batch * self.height * self.width
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.patch_len()
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn images_per_chunk(&self) -> usize {
        let hw = self.height * self.width;
        let per_image = self.patch_len() * hw;
        (COL_BUDGET / per_image).min(TARGET_COLUMNS / hw).clamp(1, self.batch)
    }
}

/// `c = a·b + beta·c` for strided row-major views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!((m - 1) * rsc + (n - 1) * csc < c.len(), "gemm output out of bounds");
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Unfolds images `first..first + count` into a `[patch_len, count·h·w]` matrix.
fn im2col(g: &ConvGeometry, input: &[f32], first: usize, count: usize, col: &mut [f32]) {
    let (h, w, k) = (g.height, g.width, g.kernel);
    let hw = h * w;
    let n = count * hw;
    let pad = (k / 2) as isize;
    for ci in 0..g.in_channels {
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = (ci * k + ky) * k + kx;
                let dst_row = &mut col[row * n..(row + 1) * n];
                // Whole-plane shift by (dy, dx), then zero the rows and
                // columns that fell outside the image.
                let offset = dy * w as isize + dx;
                let y_lo = (-dy).clamp(0, h as isize) as usize;
                let y_hi = (h as isize - dy).clamp(0, h as isize) as usize;
                let x_lo = (-dx).clamp(0, w as isize) as usize;
                let x_hi = (w as isize - dx).clamp(0, w as isize) as usize;
                let lo = ((y_lo * w) as isize).max(-offset).clamp(0, hw as isize) as usize;
                let hi = ((y_hi * w) as isize).min(hw as isize - offset).max(lo as isize) as usize;
                for bi in 0..count {
                    let src = &input[(ci * g.batch + first + bi) * hw..][..hw];
                    let dst = &mut dst_row[bi * hw..][..hw];
                    dst[..lo].fill(0.0);
                    if hi > lo {
                        let s0 = (lo as isize + offset) as usize;
                        dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                    }
                    dst[hi..].fill(0.0);
                    for y in y_lo..y_hi {
                        let r = &mut dst[y * w..][..w];
                        r[..x_lo].fill(0.0);
                        r[x_hi..].fill(0.0);
                    }
                }
            }
        }
    }
}

/// Folds a column matrix back onto images, accumulating into `grad_input`.
fn col2im_add(g: &ConvGeometry, col: &[f32], first: usize, count: usize, grad_input: &mut [f32]) {
    let (h, w, k) = (g.height, g.width, g.kernel);
    let hw = h * w;
    let n = count * hw;
    let pad = (k / 2) as isize;
    for ci in 0..g.in_channels {
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = (ci * k + ky) * k + kx;
                let src_row = &col[row * n..(row + 1) * n];
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for bi in 0..count {
                    let dst = &mut grad_input[(ci * g.batch + first + bi) * hw..][..hw];
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &src_row[bi * hw + y * w..][..w];
                        let s0 = (x0 as isize + dx) as usize;
                        let drow = &mut dst[sy as usize * w + s0..][..x1 - x0];
                        for (d, s) in drow.iter_mut().zip(&src[x0..x1]) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
}

/// Stride-1 "same" convolution. `weight` is `[out, in, k, k]`.
pub fn conv2d_forward(g: &ConvGeometry, input: &[f32], weight: &[f32], bias: &[f32], out: &mut [f32]) {
    assert_eq!(g.kernel % 2, 1, "kernel must be odd");
    assert_eq!(input.len(), g.input_len());
    assert_eq!(weight.len(), g.weight_len());
    assert_eq!(bias.len(), g.out_channels);
    assert_eq!(out.len(), g.output_len());
    let hw = g.height * g.width;
    let kk = g.patch_len();
    let chunk = g.images_per_chunk();
    let mut col = vec![0.0f32; kk * chunk * hw];
    let row_stride = g.batch * hw;
    let mut first = 0;
    while first < g.batch {
        let count = chunk.min(g.batch - first);
        let n = count * hw;
        im2col(g, input, first, count, &mut col);
        if g.out_channels < NARROW_OUTPUTS {
            // A few output rows: row-wise multiply-adds beat GEMM packing.
            for co in 0..g.out_channels {
                let dst = &mut out[co * row_stride + first * hw..][..n];
                dst.fill(0.0);
                for (wk, src) in weight[co * kk..][..kk].iter().zip(col.chunks_exact(n)) {
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += wk * s;
                    }
                }
            }
        } else {
            gemm(
                g.out_channels,
                kk,
                n,
                weight,
                (kk, 1),
                &col,
                (n, 1),
                0.0,
                &mut out[first * hw..],
                (row_stride, 1),
            );
        }
        first += count;
    }
    for (co, row) in out.chunks_exact_mut(row_stride).enumerate() {
        let b = bias[co];
        row.iter_mut().for_each(|v| *v += b);
    }
}

/// Gradients of [`conv2d_forward`]. Weight and bias gradients accumulate;
/// `grad_input`, when requested, accumulates too.
pub fn conv2d_backward(
    g: &ConvGeometry,
    input: &[f32],
    weight: &[f32],
    grad_out: &[f32],
    grad_input: Option<&mut [f32]>,
    grad_weight: &mut [f32],
    grad_bias: &mut [f32],
) {
    let hw = g.height * g.width;
    let kk = g.patch_len();
    let chunk = g.images_per_chunk();
    let row_stride = g.batch * hw;
    let mut col = vec![0.0f32; kk * chunk * hw];
    let mut grad_input = grad_input;
    let mut dcol = if grad_input.is_some() {
        vec![0.0f32; kk * chunk * hw]
    } else {
        Vec::new()
    };
    let mut first = 0;
    while first < g.batch {
        let count = chunk.min(g.batch - first);
        let n = count * hw;
        im2col(g, input, first, count, &mut col);
        let gout = &grad_out[first * hw..];
        // dW += dOut · colᵀ
        gemm(
            g.out_channels,
            n,
            kk,
            gout,
            (row_stride, 1),
            &col,
            (1, n),
            1.0,
            grad_weight,
            (kk, 1),
        );
        if let Some(gi) = grad_input.as_deref_mut() {
            // dcol = Wᵀ · dOut
            gemm(
                kk,
                g.out_channels,
                n,
                weight,
                (1, kk),
                gout,
                (row_stride, 1),
                0.0,
                &mut dcol,
                (n, 1),
            );
            col2im_add(g, &dcol, first, count, gi);
        }
        first += count;
    }
    for (co, row) in grad_out.chunks_exact(row_stride).enumerate() {
        grad_bias[co] += row.iter().map(|&v| v as f64).sum::<f64>() as f32;
    }
}

/// `y[b, o] = Σ_i x[b, i]·w[o, i] + bias[o]`.
pub fn affine_forward(x: &[f32], batch: usize, inputs: usize, w: &[f32], bias: &[f32], y: &mut [f32]) {
    let outputs = bias.len();
    assert_eq!(x.len(), batch * inputs);
    assert_eq!(w.len(), outputs * inputs);
    assert_eq!(y.len(), batch * outputs);
    gemm(
        batch,
        inputs,
        outputs,
        x,
        (inputs, 1),
        w,
        (1, inputs),
        0.0,
        y,
        (outputs, 1),
    );
    for row in y.chunks_exact_mut(outputs) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += *b;
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn affine_backward(
    x: &[f32],
    batch: usize,
    inputs: usize,
    w: &[f32],
    grad_y: &[f32],
    grad_x: Option<&mut [f32]>,
    grad_w: &mut [f32],
    grad_bias: &mut [f32],
) {
    let outputs = grad_bias.len();
    // dW += dyᵀ · x
    gemm(
        outputs,
        batch,
        inputs,
        grad_y,
        (1, outputs),
        x,
        (inputs, 1),
        1.0,
        grad_w,
        (inputs, 1),
    );
    if let Some(gx) = grad_x {
        gemm(
            batch,
            outputs,
            inputs,
            grad_y,
            (outputs, 1),
            w,
            (inputs, 1),
            1.0,
            gx,
            (inputs, 1),
        );
    }
    for o in 0..outputs {
        let s: f64 = (0..batch).map(|b| grad_y[b * outputs + o] as f64).sum();
        grad_bias[o] += s as f32;
    }
}

/// `eˣ` by range reduction to `2ⁿ·e^r`, `|r| ≤ ln2/2`, and a degree-6
/// Taylor polynomial (relative error below 5e-7). Branch-free so loops over
/// it vectorize; inputs are clamped to `[-87, 88]`.
#[inline]
pub fn exp_approx(x: f32) -> f32 {
    let x = x.clamp(-87.0, 88.0);
    // Adding and removing 1.5·2²³ rounds to the nearest integer.
    const SHIFTER: f32 = 12_582_912.0;
    let shifted = x * std::f32::consts::LOG2_E + SHIFTER;
    let n = shifted - SHIFTER;
    let r = (x - n * 0.693_145_75) - n * 1.428_606_8e-6;
    let p = 1.0 + r * (1.0 + r * (0.5 + r * (1.0 / 6.0 + r * (1.0 / 24.0 + r * (1.0 / 120.0 + r * (1.0 / 720.0))))));
    // The low mantissa bits of `shifted` hold n; rebias them into an exponent.
    let scale = f32::from_bits(shifted.to_bits().wrapping_sub(SHIFTER.to_bits()).wrapping_add(127) << 23);
    p * scale
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + exp_approx(-x))
}

pub fn silu_inplace(x: &mut [f32]) {
    for v in x {
        *v *= sigmoid(*v);
    }
}

#[inline]
pub fn silu_grad(x: f32) -> f32 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// 2×2 mean pooling over `[planes, h, w]`, where planes = channels·batch.
pub fn avg_pool2_forward(x: &[f32], planes: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..][..h * w];
        let dst = &mut out[p * oh * ow..][..oh * ow];
        for y in 0..oh {
            let r0 = &src[2 * y * w..][..w];
            let r1 = &src[(2 * y + 1) * w..][..w];
            for xo in 0..ow {
                dst[y * ow + xo] = 0.25 * ((r0[2 * xo] + r0[2 * xo + 1]) + (r1[2 * xo] + r1[2 * xo + 1]));
            }
        }
    }
    out
}

pub fn avg_pool2_backward(grad_out: &[f32], planes: usize, h: usize, w: usize, grad_in: &mut [f32]) {
    let (oh, ow) = (h / 2, w / 2);
    for p in 0..planes {
        let g = &grad_out[p * oh * ow..][..oh * ow];
        let dst = &mut grad_in[p * h * w..][..h * w];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] += 0.25 * g[(y / 2) * ow + x / 2];
            }
        }
    }
}

/// Nearest-neighbour 2× upsampling over `[planes, h, w]`.
pub fn upsample2_forward(x: &[f32], planes: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..][..h * w];
        let dst = &mut out[p * oh * ow..][..oh * ow];
        for y in 0..oh {
            for xo in 0..ow {
                dst[y * ow + xo] = src[(y / 2) * w + xo / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(grad_out: &[f32], planes: usize, h: usize, w: usize, grad_in: &mut [f32]) {
    let (oh, ow) = (2 * h, 2 * w);
    for p in 0..planes {
        let g = &grad_out[p * oh * ow..][..oh * ow];
        let dst = &mut grad_in[p * h * w..][..h * w];
        for y in 0..oh {
            for xo in 0..ow {
                dst[(y / 2) * w + xo / 2] += g[y * ow + xo];
            }
        }
    }
}

/// Adds `e[b, c]` to every pixel of plane `(c, b)` of `x: [C, B, hw]`.
pub fn add_channel_bias(x: &mut [f32], channels: usize, batch: usize, hw: usize, e: &[f32]) {
    assert_eq!(e.len(), batch * channels);
    for c in 0..channels {
        for b in 0..batch {
            let v = e[b * channels + c];
            x[(c * batch + b) * hw..][..hw].iter_mut().for_each(|p| *p += v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_approx_is_accurate() {
        let mut worst = 0.0f64;
        for i in -8000..=8000 {
            let x = i as f32 * 0.01;
            let exact = (x as f64).exp();
            worst = worst.max(((exp_approx(x) as f64 - exact) / exact).abs());
        }
        assert!(worst < 5e-7, "{worst}");
        assert_eq!(exp_approx(0.0), 1.0);
        assert!(exp_approx(-1000.0) > 0.0 && exp_approx(-1000.0) < 1e-37);
    }

    #[test]
    fn conv_of_ones_counts_in_bounds_taps() {
        let g = ConvGeometry {
            in_channels: 1,
            out_channels: 1,
            batch: 1,
            height: 3,
            width: 3,
            kernel: 3,
        };
        let mut out = vec![0.0; 9];
        conv2d_forward(&g, &[1.0; 9], &[1.0; 9], &[0.0], &mut out);
        assert_eq!(out, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn conv_matches_direct_loops() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let cases = [
            (2usize, 3usize, 5usize, 7usize),
            (5, 3, 5, 7),
            (6, 5, 5, 7),
            (5, 3, 1, 3),
            (2, 5, 2, 1),
            (6, 3, 1, 1),
        ];
        for (cout, k, h, w) in cases {
            let g = ConvGeometry {
                in_channels: 2,
                out_channels: cout,
                batch: 3,
                height: h,
                width: w,
                kernel: k,
            };
            let input: Vec<f32> = (0..g.input_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let weight: Vec<f32> = (0..g.weight_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let bias: Vec<f32> = (0..cout).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut out = vec![0.0; g.output_len()];
            conv2d_forward(&g, &input, &weight, &bias, &mut out);
            let (h, w, p) = (h as isize, w as isize, (k / 2) as isize);
            for co in 0..cout {
                for b in 0..3 {
                    for y in 0..h {
                        for x in 0..w {
                            let mut acc = bias[co] as f64;
                            for ci in 0..2 {
                                for ky in 0..k as isize {
                                    for kx in 0..k as isize {
                                        let (sy, sx) = (y + ky - p, x + kx - p);
                                        if sy < 0 || sy >= h || sx < 0 || sx >= w {
                                            continue;
                                        }
                                        let iv = input[((ci * 3 + b) as isize * h * w + sy * w + sx) as usize];
                                        let wv = weight[((co * 2 + ci) * k * k) + (ky * k as isize + kx) as usize];
                                        acc += iv as f64 * wv as f64;
                                    }
                                }
                            }
                            let got = out[((co * 3 + b) as isize * h * w + y * w + x) as usize];
                            assert!((got as f64 - acc).abs() < 1e-5, "co {co} b {b} y {y} x {x} k {k}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn pool_and_upsample_shapes() {
        let x: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let p = avg_pool2_forward(&x, 1, 4, 4);
        assert_eq!(p, vec![2.5, 4.5, 10.5, 12.5]);
        let u = upsample2_forward(&p, 1, 2, 2);
        assert_eq!(u.len(), 16);
        assert_eq!(&u[..4], &[2.5, 2.5, 4.5, 4.5]);
    }

    #[test]
    fn batching_does_not_change_per_image_output() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (cin, cout, h, w, batch) = (5, 7, 6, 6, 9);
        let g = ConvGeometry {
            in_channels: cin,
            out_channels: cout,
            batch,
            height: h,
            width: w,
            kernel: 3,
        };
        let input: Vec<f32> = (0..g.input_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let weight: Vec<f32> = (0..g.weight_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias: Vec<f32> = (0..cout).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut full = vec![0.0; g.output_len()];
        conv2d_forward(&g, &input, &weight, &bias, &mut full);
        let hw = h * w;
        for b in 0..batch {
            let single = ConvGeometry { batch: 1, ..g };
            let mut x1 = Vec::new();
            for c in 0..cin {
                x1.extend_from_slice(&input[(c * batch + b) * hw..][..hw]);
            }
            let mut y1 = vec![0.0; single.output_len()];
            conv2d_forward(&single, &x1, &weight, &bias, &mut y1);
            for c in 0..cout {
                let a = &full[(c * batch + b) * hw..][..hw];
                let s = &y1[c * hw..][..hw];
                assert!(a.iter().zip(s).all(|(p, q)| p.to_bits() == q.to_bits()));
            }
        }
    }
}
