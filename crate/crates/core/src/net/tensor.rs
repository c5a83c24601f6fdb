//! Minimal CHW tensor and the layer primitives (forward + reverse) the
//! fusion network is built from. Everything is f64 and deterministic;
//! parallel loops only ever write disjoint slices.

use rayon::prelude::*;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_data(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), c * h * w);
        Tensor { c, h, w, data }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.h + y) * self.w + x]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }
}

/// 3x3-style convolution, zero padding. Weight layout [oc][ic][k][k],
/// row-major flat. Stride 1 takes a vectorized row-axpy path.
pub fn conv2d(input: &Tensor, weight: &[f64], bias: &[f64], oc: usize, k: usize, stride: usize, pad: usize) -> Tensor {
    let (ic, ih, iw) = (input.c, input.h, input.w);
    assert_eq!(weight.len(), oc * ic * k * k);
    assert_eq!(bias.len(), oc);
    let oh = (ih + 2 * pad - k) / stride + 1;
    let ow = (iw + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(oc, oh, ow);
    out.data
        .par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(o, plane)| {
            plane.fill(bias[o]);
            if stride == 1 {
                for i in 0..ic {
                    let in_plane = input.channel(i);
                    for ky in 0..k {
                        for kx in 0..k {
                            let w = weight[((o * ic + i) * k + ky) * k + kx];
                            if w == 0.0 {
                                continue;
                            }
                            // ox range keeping ix = ox + kx - pad inside.
                            let lo = pad.saturating_sub(kx);
                            let hi = (iw + pad - kx).min(ow);
                            if lo >= hi {
                                continue;
                            }
                            for oy in 0..oh {
                                let iy = (oy + ky) as isize - pad as isize;
                                if iy < 0 || iy >= ih as isize {
                                    continue;
                                }
                                let irow = iy as usize * iw + lo + kx - pad;
                                let orow = oy * ow + lo;
                                let src = &in_plane[irow..irow + hi - lo];
                                let dst = &mut plane[orow..orow + hi - lo];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += w * s;
                                }
                            }
                        }
                    }
                }
            } else {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for i in 0..ic {
                            let wbase = ((o * ic + i) * k) * k;
                            let in_plane = input.channel(i);
                            for ky in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= ih as isize {
                                    continue;
                                }
                                let row = iy as usize * iw;
                                for kx in 0..k {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= iw as isize {
                                        continue;
                                    }
                                    acc += weight[wbase + ky * k + kx] * in_plane[row + ix as usize];
                                }
                            }
                        }
                        plane[oy * ow + ox] += acc;
                    }
                }
            }
        });
    out
}

/// Gradients of [`conv2d`] w.r.t. input, weight and bias.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &[f64],
    grad_out: &Tensor,
    oc: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (ic, ih, iw) = (input.c, input.h, input.w);
    let (oh, ow) = (grad_out.h, grad_out.w);
    assert_eq!(grad_out.c, oc);

    let mut grad_input = Tensor::zeros(ic, ih, iw);
    grad_input
        .data
        .par_chunks_mut(ih * iw)
        .enumerate()
        .for_each(|(i, plane)| {
            if stride == 1 {
                // ix = ox + kx - pad, so the ox row maps onto a shifted
                // ix row and each (ky, kx) tap is one axpy per row.
                for o in 0..oc {
                    let gplane = grad_out.channel(o);
                    for ky in 0..k {
                        for kx in 0..k {
                            let w = weight[((o * ic + i) * k + ky) * k + kx];
                            if w == 0.0 {
                                continue;
                            }
                            let lo = pad.saturating_sub(kx);
                            let hi = (iw + pad - kx).min(ow);
                            if lo >= hi {
                                continue;
                            }
                            for oy in 0..oh {
                                let iy = (oy + ky) as isize - pad as isize;
                                if iy < 0 || iy >= ih as isize {
                                    continue;
                                }
                                let irow = iy as usize * iw + lo + kx - pad;
                                let grow = oy * ow + lo;
                                let src = &gplane[grow..grow + hi - lo];
                                let dst = &mut plane[irow..irow + hi - lo];
                                for (d, g) in dst.iter_mut().zip(src) {
                                    *d += w * g;
                                }
                            }
                        }
                    }
                }
            } else {
                for o in 0..oc {
                    let gplane = grad_out.channel(o);
                    let wbase = ((o * ic + i) * k) * k;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let g = gplane[oy * ow + ox];
                            if g == 0.0 {
                                continue;
                            }
                            for ky in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= ih as isize {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= iw as isize {
                                        continue;
                                    }
                                    plane[iy as usize * iw + ix as usize] +=
                                        weight[wbase + ky * k + kx] * g;
                                }
                            }
                        }
                    }
                }
            }
        });

    let mut grad_weight = vec![0.0; oc * ic * k * k];
    let mut grad_bias = vec![0.0; oc];
    grad_weight
        .par_chunks_mut(ic * k * k)
        .zip(grad_bias.par_iter_mut())
        .enumerate()
        .for_each(|(o, (wchunk, bslot))| {
            let gplane = grad_out.channel(o);
            *bslot = gplane.iter().sum();
            for i in 0..ic {
                let in_plane = input.channel(i);
                for ky in 0..k {
                    for kx in 0..k {
                        let mut acc = 0.0;
                        if stride == 1 {
                            let lo = pad.saturating_sub(kx);
                            let hi = (iw + pad - kx).min(ow);
                            if lo >= hi {
                                continue;
                            }
                            for oy in 0..oh {
                                let iy = (oy + ky) as isize - pad as isize;
                                if iy < 0 || iy >= ih as isize {
                                    continue;
                                }
                                let irow = iy as usize * iw + lo + kx - pad;
                                let grow = oy * ow + lo;
                                let a = &gplane[grow..grow + hi - lo];
                                let b = &in_plane[irow..irow + hi - lo];
                                acc += a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                            }
                        } else {
                            for oy in 0..oh {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= ih as isize {
                                    continue;
                                }
                                let irow = iy as usize * iw;
                                let grow = oy * ow;
                                for ox in 0..ow {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= iw as isize {
                                        continue;
                                    }
                                    acc += gplane[grow + ox] * in_plane[irow + ix as usize];
                                }
                            }
                        }
                        wchunk[(i * k + ky) * k + kx] = acc;
                    }
                }
            }
        });
    (grad_input, grad_weight, grad_bias)
}

pub const IN_EPS: f64 = 1e-5;

pub struct InCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
}

/// Instance normalization with affine parameters, per channel over the
/// spatial dims.
pub fn instance_norm(x: &Tensor, gamma: &[f64], beta: &[f64]) -> (Tensor, InCache) {
    assert_eq!(gamma.len(), x.c);
    let n = (x.h * x.w) as f64;
    let mut out = Tensor::zeros(x.c, x.h, x.w);
    let mut xhat = Tensor::zeros(x.c, x.h, x.w);
    let mut inv_std = vec![0.0; x.c];
    for c in 0..x.c {
        let plane = x.channel(c);
        let mean = plane.iter().sum::<f64>() / n;
        let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / (var + IN_EPS).sqrt();
        inv_std[c] = is;
        let base = c * x.h * x.w;
        for i in 0..plane.len() {
            let xh = (plane[i] - mean) * is;
            xhat.data[base + i] = xh;
            out.data[base + i] = gamma[c] * xh + beta[c];
        }
    }
    (out, InCache { xhat, inv_std })
}

/// Reverse of [`instance_norm`]: returns (grad_x, grad_gamma, grad_beta).
pub fn instance_norm_backward(
    cache: &InCache,
    gamma: &[f64],
    grad_out: &Tensor,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let x = &cache.xhat;
    let n = (x.h * x.w) as f64;
    let mut grad_x = Tensor::zeros(x.c, x.h, x.w);
    let mut grad_gamma = vec![0.0; x.c];
    let mut grad_beta = vec![0.0; x.c];
    for c in 0..x.c {
        let xh = x.channel(c);
        let go = grad_out.channel(c);
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for i in 0..xh.len() {
            sum_g += go[i];
            sum_gx += go[i] * xh[i];
        }
        grad_beta[c] = sum_g;
        grad_gamma[c] = sum_gx;
        let mean_g = sum_g / n;
        let mean_gx = sum_gx / n;
        let scale = gamma[c] * cache.inv_std[c];
        let base = c * x.h * x.w;
        for i in 0..xh.len() {
            grad_x.data[base + i] = scale * (go[i] - mean_g - xh[i] * mean_gx);
        }
    }
    (grad_x, grad_gamma, grad_beta)
}

pub fn leaky_relu(x: &mut Tensor, slope: f64) {
    for v in &mut x.data {
        if *v < 0.0 {
            *v *= slope;
        }
    }
}

/// `pre` is the value that entered the activation.
pub fn leaky_relu_backward(pre: &Tensor, grad_out: &Tensor, slope: f64) -> Tensor {
    let mut g = grad_out.clone();
    for (v, p) in g.data.iter_mut().zip(&pre.data) {
        if *p < 0.0 {
            *v *= slope;
        }
    }
    g
}

pub fn leaky_relu_vec(x: &mut [f64], slope: f64) {
    for v in x {
        if *v < 0.0 {
            *v *= slope;
        }
    }
}

pub fn leaky_relu_vec_backward(pre: &[f64], grad_out: &[f64], slope: f64) -> Vec<f64> {
    pre.iter()
        .zip(grad_out)
        .map(|(p, g)| if *p < 0.0 { g * slope } else { *g })
        .collect()
}

/// Nearest-neighbor 2x upsample.
pub fn upsample2(x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.c, x.h * 2, x.w * 2);
    for c in 0..x.c {
        for y in 0..x.h {
            for xx in 0..x.w {
                let v = x.at(c, y, xx);
                *out.at_mut(c, 2 * y, 2 * xx) = v;
                *out.at_mut(c, 2 * y, 2 * xx + 1) = v;
                *out.at_mut(c, 2 * y + 1, 2 * xx) = v;
                *out.at_mut(c, 2 * y + 1, 2 * xx + 1) = v;
            }
        }
    }
    out
}

pub fn upsample2_backward(grad_out: &Tensor) -> Tensor {
    let (c, oh, ow) = (grad_out.c, grad_out.h, grad_out.w);
    let mut g = Tensor::zeros(c, oh / 2, ow / 2);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                *g.at_mut(ch, y / 2, x / 2) += grad_out.at(ch, y, x);
            }
        }
    }
    g
}

pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!((a.h, a.w), (b.h, b.w));
    let mut data = Vec::with_capacity((a.c + b.c) * a.h * a.w);
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor::from_data(a.c + b.c, a.h, a.w, data)
}

pub fn split_channels(grad: &Tensor, c_first: usize) -> (Tensor, Tensor) {
    let plane = grad.h * grad.w;
    let a = Tensor::from_data(c_first, grad.h, grad.w, grad.data[..c_first * plane].to_vec());
    let b = Tensor::from_data(
        grad.c - c_first,
        grad.h,
        grad.w,
        grad.data[c_first * plane..].to_vec(),
    );
    (a, b)
}

/// Per-channel spatial mean.
pub fn spatial_mean(x: &Tensor) -> Vec<f64> {
    let n = (x.h * x.w) as f64;
    (0..x.c).map(|c| x.channel(c).iter().sum::<f64>() / n).collect()
}

pub fn spatial_mean_backward(grad: &[f64], c: usize, h: usize, w: usize) -> Tensor {
    let n = (h * w) as f64;
    let mut out = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let g = grad[ch] / n;
        let base = ch * h * w;
        for i in 0..h * w {
            out.data[base + i] = g;
        }
    }
    out
}

/// Dense layer: weight layout [out][in], flat.
pub fn fc(input: &[f64], weight: &[f64], bias: &[f64], out_dim: usize) -> Vec<f64> {
    let in_dim = input.len();
    assert_eq!(weight.len(), out_dim * in_dim);
    (0..out_dim)
        .map(|o| {
            let row = &weight[o * in_dim..(o + 1) * in_dim];
            bias[o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
        })
        .collect()
}

/// Returns (grad_input, grad_weight, grad_bias).
pub fn fc_backward(input: &[f64], weight: &[f64], grad_out: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let in_dim = input.len();
    let out_dim = grad_out.len();
    let mut grad_input = vec![0.0; in_dim];
    let mut grad_weight = vec![0.0; out_dim * in_dim];
    for o in 0..out_dim {
        let g = grad_out[o];
        let row = &weight[o * in_dim..(o + 1) * in_dim];
        for i in 0..in_dim {
            grad_input[i] += row[i] * g;
            grad_weight[o * in_dim + i] = input[i] * g;
        }
    }
    (grad_input, grad_weight, grad_out.to_vec())
}

/// Adds `v[c]` to every spatial position of channel c.
pub fn broadcast_add(x: &Tensor, v: &[f64]) -> Tensor {
    assert_eq!(v.len(), x.c);
    let mut out = x.clone();
    for c in 0..x.c {
        let base = c * x.h * x.w;
        for i in 0..x.h * x.w {
            out.data[base + i] += v[c];
        }
    }
    out
}

pub fn broadcast_add_backward(grad_out: &Tensor) -> Vec<f64> {
    (0..grad_out.c).map(|c| grad_out.channel(c).iter().sum()).collect()
}

/// Elementwise max over a list of tensors; returns the fused tensor and
/// the argmax index per element (first index wins ties).
pub fn max_fuse(tensors: &[&Tensor]) -> (Tensor, Vec<u32>) {
    let first = tensors[0];
    let mut out = first.clone();
    let mut argmax = vec![0u32; first.data.len()];
    for (ti, t) in tensors.iter().enumerate().skip(1) {
        assert_eq!(t.data.len(), out.data.len());
        for (i, v) in t.data.iter().enumerate() {
            if *v > out.data[i] {
                out.data[i] = *v;
                argmax[i] = ti as u32;
            }
        }
    }
    (out, argmax)
}

pub fn max_fuse_vec(vecs: &[Vec<f64>]) -> (Vec<f64>, Vec<u32>) {
    let mut out = vecs[0].clone();
    let mut argmax = vec![0u32; out.len()];
    for (ti, v) in vecs.iter().enumerate().skip(1) {
        for (i, x) in v.iter().enumerate() {
            if *x > out[i] {
                out[i] = *x;
                argmax[i] = ti as u32;
            }
        }
    }
    (out, argmax)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_data(c, h, w, (0..c * h * w).map(|_| rng.gen::<f64>() - 0.5).collect())
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, 1, 4, 4);
        // 3x3 kernel with center 1: identity with pad 1, stride 1.
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let y = conv2d(&x, &w, &[0.0], 1, 3, 1, 1);
        assert_eq!(y.data, x.data);
    }

    #[test]
    fn conv_stride2_halves_dims() {
        let x = Tensor::zeros(3, 8, 8);
        let w = vec![0.0; 4 * 3 * 9];
        let y = conv2d(&x, &w, &[0.0; 4], 4, 3, 2, 1);
        assert_eq!((y.c, y.h, y.w), (4, 4, 4));
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, 2, 5, 5);
        let oc = 3;
        let k = 3;
        let w: Vec<f64> = (0..oc * 2 * 9).map(|_| rng.gen::<f64>() - 0.5).collect();
        let b: Vec<f64> = (0..oc).map(|_| rng.gen::<f64>() - 0.5).collect();
        for (stride, pad) in [(1usize, 1usize), (2, 1)] {
            let y = conv2d(&x, &w, &b, oc, k, stride, pad);
            let upstream = rand_tensor(&mut rng, y.c, y.h, y.w);
            let (gx, gw, gb) = conv2d_backward(&x, &w, &upstream, oc, k, stride, pad);
            let loss = |x: &Tensor, w: &[f64], b: &[f64]| -> f64 {
                conv2d(x, w, b, oc, k, stride, pad)
                    .data
                    .iter()
                    .zip(&upstream.data)
                    .map(|(a, u)| a * u)
                    .sum()
            };
            let eps = 1e-6;
            for idx in [0usize, 7, 20, x.data.len() - 1] {
                let mut xp = x.clone();
                xp.data[idx] += eps;
                let mut xm = x.clone();
                xm.data[idx] -= eps;
                let fd = (loss(&xp, &w, &b) - loss(&xm, &w, &b)) / (2.0 * eps);
                assert!((gx.data[idx] - fd).abs() < 1e-7, "input grad at {}", idx);
            }
            for idx in [0usize, 13, w.len() - 1] {
                let mut wp = w.clone();
                wp[idx] += eps;
                let mut wm = w.clone();
                wm[idx] -= eps;
                let fd = (loss(&x, &wp, &b) - loss(&x, &wm, &b)) / (2.0 * eps);
                assert!((gw[idx] - fd).abs() < 1e-7, "weight grad at {}", idx);
            }
            for idx in 0..oc {
                let mut bp = b.clone();
                bp[idx] += eps;
                let mut bm = b.clone();
                bm[idx] -= eps;
                let fd = (loss(&x, &w, &bp) - loss(&x, &w, &bm)) / (2.0 * eps);
                assert!((gb[idx] - fd).abs() < 1e-7, "bias grad at {}", idx);
            }
        }
    }

    #[test]
    fn instance_norm_normalizes_and_backprops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, 2, 4, 4);
        let gamma = vec![1.3, 0.7];
        let beta = vec![0.1, -0.2];
        let (y, cache) = instance_norm(&x, &gamma, &beta);
        for c in 0..2 {
            let plane = y.channel(c);
            let mean = plane.iter().sum::<f64>() / 16.0;
            assert!((mean - beta[c]).abs() < 1e-10);
        }
        let upstream = rand_tensor(&mut rng, 2, 4, 4);
        let (gx, gg, gb) = instance_norm_backward(&cache, &gamma, &upstream);
        let loss = |x: &Tensor, gamma: &[f64], beta: &[f64]| -> f64 {
            instance_norm(x, gamma, beta)
                .0
                .data
                .iter()
                .zip(&upstream.data)
                .map(|(a, u)| a * u)
                .sum()
        };
        let eps = 1e-6;
        for idx in [0usize, 5, 17, 31] {
            let mut xp = x.clone();
            xp.data[idx] += eps;
            let mut xm = x.clone();
            xm.data[idx] -= eps;
            let fd = (loss(&xp, &gamma, &beta) - loss(&xm, &gamma, &beta)) / (2.0 * eps);
            assert!((gx.data[idx] - fd).abs() < 1e-6, "{} vs {}", gx.data[idx], fd);
        }
        for c in 0..2 {
            let mut gp = gamma.clone();
            gp[c] += eps;
            let mut gm = gamma.clone();
            gm[c] -= eps;
            let fd = (loss(&x, &gp, &beta) - loss(&x, &gm, &beta)) / (2.0 * eps);
            assert!((gg[c] - fd).abs() < 1e-6);
            let mut bp = beta.clone();
            bp[c] += eps;
            let mut bm = beta.clone();
            bm[c] -= eps;
            let fd = (loss(&x, &gamma, &bp) - loss(&x, &gamma, &bm)) / (2.0 * eps);
            assert!((gb[c] - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn upsample_round_trip_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&mut rng, 2, 3, 3);
        let up = upsample2(&x);
        assert_eq!((up.h, up.w), (6, 6));
        let g = upsample2_backward(&up);
        // Backward of forward output sums the 4 copies.
        for (gv, xv) in g.data.iter().zip(&x.data) {
            assert!((gv - 4.0 * xv).abs() < 1e-12);
        }
    }

    #[test]
    fn fc_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input: Vec<f64> = (0..4).map(|_| rng.gen::<f64>() - 0.5).collect();
        let w: Vec<f64> = (0..12).map(|_| rng.gen::<f64>() - 0.5).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() - 0.5).collect();
        let upstream: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() - 0.5).collect();
        let loss = |inp: &[f64], w: &[f64], b: &[f64]| -> f64 {
            fc(inp, w, b, 3).iter().zip(&upstream).map(|(a, u)| a * u).sum()
        };
        let (gi, gw, gb) = fc_backward(&input, &w, &upstream);
        let eps = 1e-6;
        for i in 0..4 {
            let mut ip = input.clone();
            ip[i] += eps;
            let mut im = input.clone();
            im[i] -= eps;
            let fd = (loss(&ip, &w, &b) - loss(&im, &w, &b)) / (2.0 * eps);
            assert!((gi[i] - fd).abs() < 1e-8);
        }
        for i in 0..12 {
            let mut wp = w.clone();
            wp[i] += eps;
            let mut wm = w.clone();
            wm[i] -= eps;
            let fd = (loss(&input, &wp, &b) - loss(&input, &wm, &b)) / (2.0 * eps);
            assert!((gw[i] - fd).abs() < 1e-8);
        }
        assert_eq!(gb, upstream);
    }

    #[test]
    fn max_fuse_routes_first_index_on_ties() {
        let a = Tensor::from_data(1, 1, 2, vec![1.0, -2.0]);
        let b = Tensor::from_data(1, 1, 2, vec![1.0, 3.0]);
        let (fused, argmax) = max_fuse(&[&a, &b]);
        assert_eq!(fused.data, vec![1.0, 3.0]);
        assert_eq!(argmax, vec![0, 1]);
    }

    #[test]
    fn spatial_mean_and_backward() {
        let x = Tensor::from_data(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(spatial_mean(&x), vec![2.5]);
        let g = spatial_mean_backward(&[1.0], 1, 2, 2);
        assert_eq!(g.data, vec![0.25; 4]);
    }
}
