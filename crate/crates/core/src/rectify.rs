//! Homography from four marked frame corners and rectifying warp.
//!
//! The capture protocol marks the four corners of a paper frame; the
//! 4-correspondence direct linear transform below maps the output unit
//! square onto that quad so the photograph can be inverse-warped into a
//! rectified square crop.

use crate::error::{Error, Result};
use crate::image::LdrImage;

/// Four image-space corner points in pixels, ordered TL, TR, BR, BL.
#[derive(Clone, Debug, PartialEq)]
pub struct CornerSet {
    pub points: [[f64; 2]; 4],
    pub target_size: usize,
}

impl CornerSet {
    pub fn new(points: [[f64; 2]; 4], target_size: usize) -> Self {
        CornerSet { points, target_size }
    }
}

/// 3x3 projective transform, normalized so h33 = 1.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Homography {
    pub m: [[f64; 3]; 3],
}

impl Homography {
    pub fn identity() -> Self {
        Homography {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let m = &self.m;
        let w = m[2][0] * p[0] + m[2][1] * p[1] + m[2][2];
        [
            (m[0][0] * p[0] + m[0][1] * p[1] + m[0][2]) / w,
            (m[1][0] * p[0] + m[1][1] * p[1] + m[1][2]) / w,
        ]
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// `self` after `other`: (self * other)(p) = self(other(p)).
    pub fn compose(&self, other: &Homography) -> Result<Homography> {
        let mut out = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                for k in 0..3 {
                    out[r][c] += self.m[r][k] * other.m[k][c];
                }
            }
        }
        normalize(out)
    }
}

fn normalize(m: [[f64; 3]; 3]) -> Result<Homography> {
    let h33 = m[2][2];
    if h33.abs() < 1e-300 {
        return Err(Error::Degenerate("homography has h33 = 0".into()));
    }
    let mut out = m;
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] /= h33;
        }
    }
    let h = Homography { m: out };
    if h.det().abs() <= 1e-12 {
        return Err(Error::Degenerate(format!(
            "homography is singular (det {})",
            h.det()
        )));
    }
    Ok(h)
}

/// Solves the 8x8 DLT system mapping each `src` point to its `dst`
/// counterpart, with h33 fixed to 1. Degenerate quads (three collinear
/// points, coincident points) yield a singular-system error.
pub fn solve_homography(src: &[[f64; 2]; 4], dst: &[[f64; 2]; 4]) -> Result<Homography> {
    // Rows: [x y 1 0 0 0 -ux -uy | u], [0 0 0 x y 1 -vx -vy | v]
    let mut a = [[0.0f64; 9]; 8];
    for i in 0..4 {
        let [x, y] = src[i];
        let [u, v] = dst[i];
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    let h = solve_linear_8(&mut a)
        .ok_or_else(|| Error::Degenerate("singular DLT system (degenerate corners)".into()))?;
    normalize([
        [h[0], h[1], h[2]],
        [h[3], h[4], h[5]],
        [h[6], h[7], 1.0],
    ])
}

/// Gaussian elimination with partial pivoting on an 8x8 augmented system.
fn solve_linear_8(a: &mut [[f64; 9]; 8]) -> Option<[f64; 8]> {
    for col in 0..8 {
        let pivot = (col..8).max_by(|&i, &j| {
            a[i][col].abs().partial_cmp(&a[j][col].abs()).expect("finite")
        })?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        for row in col + 1..8 {
            let f = a[row][col] / a[col][col];
            for k in col..9 {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    let mut x = [0.0f64; 8];
    for col in (0..8).rev() {
        let mut s = a[col][8];
        for k in col + 1..8 {
            s -= a[col][k] * x[k];
        }
        x[col] = s / a[col][col];
    }
    Some(x)
}

/// Inverse-warps the photograph to a `target_size` square: output pixel
/// (u, v) samples the source at H(u, v) where H maps the unit output
/// square onto the corner quad. Bilinear, edge-clamped.
pub fn rectify(image: &LdrImage, corners: &CornerSet) -> Result<LdrImage> {
    let unit = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    let h = solve_homography(&unit, &corners.points)?;
    let size = corners.target_size;
    let mut out = LdrImage::new(size, size);
    for y in 0..size {
        for x in 0..size {
            let u = (x as f64 + 0.5) / size as f64;
            let v = (y as f64 + 0.5) / size as f64;
            let src = h.apply([u, v]);
            *out.pixel_mut(x, y) = image.sample_clamped(src[0], src[1]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_from_matching_quads() {
        let q = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let h = solve_homography(&q, &q).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let expect = if r == c { 1.0 } else { 0.0 };
                assert!((h.m[r][c] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pure_translation() {
        let src = [[3.0, 4.0], [10.0, 4.0], [10.0, 12.0], [3.0, 12.0]];
        let dst = src.map(|p| [p[0] + 10.0, p[1] + 5.0]);
        let h = solve_homography(&src, &dst).unwrap();
        for (s, d) in src.iter().zip(&dst) {
            let p = h.apply(*s);
            assert!((p[0] - d[0]).abs() < 1e-9);
            assert!((p[1] - d[1]).abs() < 1e-9);
        }
        assert!((h.m[0][2] - 10.0).abs() < 1e-9);
        assert!((h.m[1][2] - 5.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_corners_are_rejected() {
        // Three collinear points.
        let src = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.0, 1.0]];
        let dst = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        assert!(solve_homography(&src, &dst).is_err());
        // Coincident points.
        let src = [[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        assert!(solve_homography(&src, &dst).is_err());
    }

    #[test]
    fn composition_chains_points() {
        let a = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let b = [[2.0, 1.0], [5.0, 0.5], [6.0, 4.0], [1.5, 3.5]];
        let c = [[-1.0, 0.0], [0.5, -0.5], [1.0, 2.0], [-2.0, 1.0]];
        let hab = solve_homography(&a, &b).unwrap();
        let hbc = solve_homography(&b, &c).unwrap();
        let hac = hbc.compose(&hab).unwrap();
        for (pa, pc) in a.iter().zip(&c) {
            let p = hac.apply(*pa);
            assert!((p[0] - pc[0]).abs() < 1e-8);
            assert!((p[1] - pc[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn inverse_composes_to_identity() {
        let a = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let b = [[2.0, 1.0], [5.0, 0.5], [6.0, 4.0], [1.5, 3.5]];
        let fwd = solve_homography(&a, &b).unwrap();
        let bwd = solve_homography(&b, &a).unwrap();
        let id = bwd.compose(&fwd).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let expect = if r == c { 1.0 } else { 0.0 };
                assert!((id.m[r][c] - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rectify_full_image_is_identity() {
        let img = LdrImage::from_fn(8, 8, |x, y| {
            [x as f64 / 7.0, y as f64 / 7.0, ((x * y) % 5) as f64 / 4.0]
        });
        let corners = CornerSet::new(
            [[0.0, 0.0], [8.0, 0.0], [8.0, 8.0], [0.0, 8.0]],
            8,
        );
        let out = rectify(&img, &corners).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                for c in 0..3 {
                    assert!((out.pixel(x, y)[c] - img.pixel(x, y)[c]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn rectify_output_size_is_target() {
        let img = LdrImage::new(16, 12);
        let corners = CornerSet::new(
            [[1.0, 1.0], [14.0, 2.0], [15.0, 11.0], [2.0, 10.0]],
            5,
        );
        let out = rectify(&img, &corners).unwrap();
        assert_eq!(out.width(), 5);
        assert_eq!(out.height(), 5);
    }

    #[test]
    fn axis_aligned_crop_matches_reference_resampler() {
        let img = LdrImage::from_fn(32, 32, |x, y| {
            [
                (x as f64 * 0.37).sin().abs(),
                (y as f64 * 0.53).cos().abs(),
                ((x + y) as f64 * 0.11).sin().abs(),
            ]
        });
        // Axis-aligned sub-rectangle: plain crop + resize.
        let (x0, y0, x1, y1) = (4.0, 6.0, 28.0, 22.0);
        let corners = CornerSet::new([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], 12);
        let out = rectify(&img, &corners).unwrap();
        for y in 0..12 {
            for x in 0..12 {
                // Independent crop-resample: linear map of output texel
                // centers into the rectangle, then bilinear lookup.
                let sx = x0 + (x as f64 + 0.5) / 12.0 * (x1 - x0);
                let sy = y0 + (y as f64 + 0.5) / 12.0 * (y1 - y0);
                let expect = img.sample_clamped(sx, sy);
                for c in 0..3 {
                    assert!((out.pixel(x, y)[c] - expect[c]).abs() < 1e-6);
                }
            }
        }
    }
}
