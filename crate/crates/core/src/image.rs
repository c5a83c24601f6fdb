//! Pixel containers for linear HDR radiance and degraded LDR observations.
//!
//! Both types store row-major RGB with row 0 at the top. Radiance values
//! are linear and unbounded above; LDR values live on a quantized grid in
//! [0, 1] and are interpreted as gamma-encoded unless stated otherwise.

use crate::error::{Error, Result};
use crate::math::Rgb;

#[derive(Clone, Debug, PartialEq)]
pub struct RadianceImage {
    width: usize,
    height: usize,
    data: Vec<Rgb>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LdrImage {
    width: usize,
    height: usize,
    data: Vec<Rgb>,
}

macro_rules! impl_image_common {
    ($ty:ident) => {
        impl $ty {
            pub fn new(width: usize, height: usize) -> Self {
                $ty {
                    width,
                    height,
                    data: vec![[0.0; 3]; width * height],
                }
            }

            pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Self {
                let mut img = Self::new(width, height);
                for y in 0..height {
                    for x in 0..width {
                        img.data[y * width + x] = f(x, y);
                    }
                }
                img
            }

            pub fn from_pixels(width: usize, height: usize, data: Vec<Rgb>) -> Result<Self> {
                if data.len() != width * height {
                    return Err(Error::DimensionMismatch(format!(
                        "{}x{} image needs {} pixels, got {}",
                        width,
                        height,
                        width * height,
                        data.len()
                    )));
                }
                Ok($ty { width, height, data })
            }

            pub fn width(&self) -> usize {
                self.width
            }

            pub fn height(&self) -> usize {
                self.height
            }

            pub fn pixel(&self, x: usize, y: usize) -> Rgb {
                self.data[y * self.width + x]
            }

            pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut Rgb {
                &mut self.data[y * self.width + x]
            }

            pub fn pixels(&self) -> &[Rgb] {
                &self.data
            }

            pub fn pixels_mut(&mut self) -> &mut [Rgb] {
                &mut self.data
            }

            /// Bilinear sample at a continuous pixel position (texel (i, j)
            /// has its center at (i + 0.5, j + 0.5)); out-of-bounds taps
            /// clamp to the nearest edge texel.
            pub fn sample_clamped(&self, x: f64, y: f64) -> Rgb {
                let ((x0, y0), w) = bilinear_taps(x, y);
                let cx = |i: i64| i.clamp(0, self.width as i64 - 1) as usize;
                let cy = |j: i64| j.clamp(0, self.height as i64 - 1) as usize;
                let mut out = [0.0; 3];
                for (t, &(dx, dy)) in TAP_OFFSETS.iter().enumerate() {
                    let p = self.pixel(cx(x0 + dx), cy(y0 + dy));
                    for c in 0..3 {
                        out[c] += w[t] * p[c];
                    }
                }
                out
            }
        }
    };
}

impl_image_common!(RadianceImage);
impl_image_common!(LdrImage);

impl LdrImage {
    /// Undoes the display gamma, producing linear radiance (`x^gamma`).
    pub fn to_linear(&self, gamma: f64) -> RadianceImage {
        RadianceImage {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|p| [p[0].powf(gamma), p[1].powf(gamma), p[2].powf(gamma)])
                .collect(),
        }
    }
}

impl RadianceImage {
    pub fn is_finite_nonnegative(&self) -> bool {
        self.data
            .iter()
            .all(|p| p.iter().all(|v| v.is_finite() && *v >= 0.0))
    }
}

pub(crate) const TAP_OFFSETS: [(i64, i64); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];

/// Base texel and weights for bilinear sampling at continuous position
/// (x, y) with texel centers at half-integer coordinates.
pub(crate) fn bilinear_taps(x: f64, y: f64) -> ((i64, i64), [f64; 4]) {
    let fx = x - 0.5;
    let fy = y - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let tx = fx - x0;
    let ty = fy - y0;
    (
        (x0 as i64, y0 as i64),
        [
            (1.0 - tx) * (1.0 - ty),
            tx * (1.0 - ty),
            (1.0 - tx) * ty,
            tx * ty,
        ],
    )
}

/// Proper modulo for wrap addressing (result in [0, m)).
pub(crate) fn wrap_index(i: i64, m: usize) -> usize {
    let m = m as i64;
    (((i % m) + m) % m) as usize
}
