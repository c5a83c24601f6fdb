//! Shared oracles and fixtures for the integration suites. Everything in
//! here is written against the formulas directly and stays independent
//! of the library's computation paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svbrdf_core::image::LdrImage;
use svbrdf_core::material::{SvbrdfMaps, R_MIN};
use svbrdf_core::math::Vec3;
use svbrdf_core::metrics::SsimParams;

/// Scalar reference for the Cook-Torrance texel: evaluates D, F, G
/// term by term from their definitions (GGX with alpha = roughness^2,
/// Schlick Fresnel on wo.h, Smith/Schlick-GGX geometry with k = alpha/2).
pub fn oracle_brdf(
    n: [f64; 3],
    diffuse: [f64; 3],
    specular: [f64; 3],
    roughness: f64,
    wi: [f64; 3],
    wo: [f64; 3],
) -> [f64; 3] {
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let n_wi = dot(n, wi);
    let n_wo = dot(n, wo);
    if n_wi <= 0.0 || n_wo <= 0.0 {
        return [0.0; 3];
    }
    let sum = [wi[0] + wo[0], wi[1] + wo[1], wi[2] + wo[2]];
    let len = dot(sum, sum).sqrt();
    let h = [sum[0] / len, sum[1] / len, sum[2] / len];
    let n_h = dot(n, h);
    let wo_h = dot(wo, h);

    let alpha = roughness * roughness;
    let a2 = alpha * alpha;
    let t = n_h * n_h * (a2 - 1.0) + 1.0;
    let d = a2 / (std::f64::consts::PI * t * t);
    let k = alpha / 2.0;
    let g1 = |c: f64| c / (c * (1.0 - k) + k);
    let g = g1(n_wi) * g1(n_wo);
    let mut out = [0.0; 3];
    for c in 0..3 {
        let fresnel = specular[c] + (1.0 - specular[c]) * (1.0 - wo_h).powi(5);
        out[c] = diffuse[c] / std::f64::consts::PI + d * fresnel * g / (4.0 * n_wi * n_wo);
    }
    out
}

pub struct BrdfInput {
    pub slope: [f64; 2],
    pub normal: Vec3,
    pub diffuse: [f64; 3],
    pub specular: [f64; 3],
    pub roughness: f64,
    pub wi: Vec3,
    pub wo: Vec3,
}

/// Random valid BRDF input; directions stay away from the clamp boundary
/// by `margin`.
pub fn random_brdf_input(rng: &mut ChaCha8Rng, margin: f64) -> BrdfInput {
    let slope = [rng.gen::<f64>() * 1.6 - 0.8, rng.gen::<f64>() * 1.6 - 0.8];
    let normal = Vec3::new(slope[0], slope[1], 1.0).normalize();
    let mut dir = || loop {
        let v = Vec3::new(
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>(),
        );
        let len = v.length();
        if len > 1e-3 && len < 1.0 {
            let v = v * (1.0 / len);
            if normal.dot(v) > margin {
                return v;
            }
        }
    };
    let wi = dir();
    let wo = dir();
    BrdfInput {
        slope,
        normal,
        diffuse: [rng.gen(), rng.gen(), rng.gen()],
        specular: [rng.gen(), rng.gen(), rng.gen()],
        roughness: R_MIN + (1.0 - R_MIN) * rng.gen::<f64>(),
        wi,
        wo,
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom == 0.0 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

/// Three textured 32x32 materials used by the evaluation experiments.
pub fn textured_testset(size: usize) -> Vec<SvbrdfMaps> {
    let checker = SvbrdfMaps::from_fn(size, size, |x, y| {
        let cell = ((x / 8) + (y / 8)) % 2;
        let n = Vec3::new(
            0.25 * ((x as f64) * 0.5).sin(),
            0.25 * ((y as f64) * 0.4).cos(),
            1.0,
        )
        .normalize();
        (
            n.to_array(),
            if cell == 0 { [0.55, 0.25, 0.15] } else { [0.2, 0.35, 0.5] },
            [0.04; 3],
            if cell == 0 { 0.3 } else { 0.5 },
        )
    });
    let gradient = SvbrdfMaps::from_fn(size, size, |x, y| {
        let fx = x as f64 / (size - 1) as f64;
        let fy = y as f64 / (size - 1) as f64;
        (
            [0.0, 0.0, 1.0],
            [0.2 + 0.5 * fx, 0.4, 0.6 - 0.3 * fy],
            [0.03 + 0.04 * fy; 3],
            (0.25 + 0.4 * fx).clamp(R_MIN, 1.0),
        )
    });
    let waves = SvbrdfMaps::from_fn(size, size, |x, y| {
        let phase = (x as f64) * 0.6 + (y as f64) * 0.3;
        let n = Vec3::new(0.3 * phase.sin(), 0.3 * (phase * 0.7).cos(), 1.0).normalize();
        (
            n.to_array(),
            [0.45, 0.4 + 0.1 * phase.sin().abs(), 0.3],
            [0.06, 0.05, 0.04],
            (0.4 + 0.15 * (phase * 0.5).sin()).clamp(R_MIN, 1.0),
        )
    });
    vec![checker, gradient, waves]
}

/// Naive per-window SSIM, independent of the library's separable path.
pub fn reference_ssim(a: &LdrImage, b: &LdrImage, p: &SsimParams) -> f64 {
    let k = p.window;
    let c = (k - 1) as f64 / 2.0;
    let mut w2 = vec![0.0; k * k];
    let mut sum = 0.0;
    for j in 0..k {
        for i in 0..k {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            let v = (-d2 / (2.0 * p.sigma * p.sigma)).exp();
            w2[j * k + i] = v;
            sum += v;
        }
    }
    for v in &mut w2 {
        *v /= sum;
    }
    let c1 = (p.k1 * p.dynamic_range).powi(2);
    let c2 = (p.k2 * p.dynamic_range).powi(2);
    let (ow, oh) = (a.width() - k + 1, a.height() - k + 1);
    let mut total = 0.0;
    for ch in 0..3 {
        for wy in 0..oh {
            for wx in 0..ow {
                let (mut mx, mut my) = (0.0, 0.0);
                let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
                for j in 0..k {
                    for i in 0..k {
                        let wv = w2[j * k + i];
                        let x = a.pixel(wx + i, wy + j)[ch];
                        let y = b.pixel(wx + i, wy + j)[ch];
                        mx += wv * x;
                        my += wv * y;
                        sxx += wv * x * x;
                        syy += wv * y * y;
                        sxy += wv * x * y;
                    }
                }
                let var_x = sxx - mx * mx;
                let var_y = syy - my * my;
                let cov = sxy - mx * my;
                total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
            }
        }
    }
    total / (ow * oh * 3) as f64
}

/// All permutations of 0..n (Heap's algorithm); the identity comes first.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = vec![a.clone()];
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
