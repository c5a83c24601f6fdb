//! Small vector/scalar helpers shared across the crate.

use std::ops::{Add, Mul, Neg, Sub};

/// Linear RGB triple.
pub type Rgb = [f64; 3];

pub fn rgb_add(a: Rgb, b: Rgb) -> Rgb {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn rgb_sub(a: Rgb, b: Rgb) -> Rgb {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn rgb_mul(a: Rgb, b: Rgb) -> Rgb {
    [a[0] * b[0], a[1] * b[1], a[2] * b[2]]
}

pub fn rgb_scale(a: Rgb, s: f64) -> Rgb {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn length_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn length(self) -> f64 {
        self.length_squared().sqrt()
    }

    pub fn normalize(self) -> Vec3 {
        self * (1.0 / self.length())
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Vec3 {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`]; caller must keep `p` strictly inside (0, 1).
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Cosine-weighted direction on the upper hemisphere (+z).
/// `u1`, `u2` are uniform samples in [0, 1).
pub fn cosine_hemisphere(u1: f64, u2: f64) -> Vec3 {
    let r = u1.sqrt();
    let phi = 2.0 * std::f64::consts::PI * u2;
    Vec3::new(r * phi.cos(), r * phi.sin(), (1.0 - u1).max(0.0).sqrt())
}

/// Rotates `dir` away from itself by `angle` radians toward an azimuth
/// `phi` in the plane perpendicular to it.
pub fn perturb_direction(dir: Vec3, angle: f64, phi: f64) -> Vec3 {
    // Any tangent frame around dir works; pick the smaller axis to avoid
    // degeneracy.
    let helper = if dir.z.abs() < 0.9 {
        Vec3::new(0.0, 0.0, 1.0)
    } else {
        Vec3::new(1.0, 0.0, 0.0)
    };
    let t = Vec3::new(
        dir.y * helper.z - dir.z * helper.y,
        dir.z * helper.x - dir.x * helper.z,
        dir.x * helper.y - dir.y * helper.x,
    )
    .normalize();
    let b = Vec3::new(
        dir.y * t.z - dir.z * t.y,
        dir.z * t.x - dir.x * t.z,
        dir.x * t.y - dir.y * t.x,
    );
    let (sa, ca) = angle.sin_cos();
    let (sp, cp) = phi.sin_cos();
    (dir * ca + (t * cp + b * sp) * sa).normalize()
}

/// SplitMix64 step; used to derive independent sub-seeds.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Combines a base seed with a stream index into a fresh seed.
pub fn seed_stream(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x51AF_8B1C_9D2E_3F47)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_logit_round_trip() {
        for &p in &[1e-6, 0.25, 0.5, 0.9, 1.0 - 1e-9] {
            assert!((sigmoid(logit(p)) - p).abs() < 1e-12);
        }
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(1e4) <= 1.0 && sigmoid(1e4) > 1.0 - 1e-12);
        assert!(sigmoid(-1e4) >= 0.0 && sigmoid(-1e4) < 1e-12);
    }

    #[test]
    fn cosine_hemisphere_is_upper() {
        for i in 0..64 {
            for j in 0..64 {
                let d = cosine_hemisphere(i as f64 / 64.0, j as f64 / 64.0);
                assert!(d.z >= 0.0);
                assert!((d.length() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn perturb_direction_angle_is_honored() {
        let d = Vec3::new(0.3, -0.2, 0.9).normalize();
        for i in 0..32 {
            let angle = 0.087; // 5 degrees
            let phi = i as f64 * 0.2;
            let p = perturb_direction(d, angle, phi);
            assert!((p.dot(d).acos() - angle).abs() < 1e-9);
        }
    }

    #[test]
    fn seed_streams_differ() {
        let a = seed_stream(42, 0);
        let b = seed_stream(42, 1);
        let c = seed_stream(43, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, seed_stream(42, 0));
    }
}
