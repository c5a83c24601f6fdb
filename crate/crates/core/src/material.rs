//! SVBRDF representation and the Cook-Torrance texel evaluation.
//!
//! A material is four per-pixel maps: tangent-space unit normal (+z up),
//! diffuse albedo, specular albedo (both RGB in [0, 1]) and a scalar
//! roughness in [`R_MIN`, 1]. The BRDF is a Lambertian lobe plus a
//! GGX/Schlick/Smith microfacet lobe:
//!
//! ```text
//! f = diffuse/pi + D * F * G / (4 (n.wi)(n.wo))
//! D(h) = a^2 / (pi ((n.h)^2 (a^2 - 1) + 1)^2),  a = roughness^2
//! F    = specular + (1 - specular) (1 - (wo.h))^5
//! G1(v) = (n.v) / ((n.v)(1 - k) + k),  k = a / 2,  G = G1(wi) G1(wo)
//! ```
//!
//! Gradients are expressed in parameter space: the normal is driven by
//! two slope channels with `n = normalize(sx, sy, 1)`, which keeps the
//! hemisphere constraint by construction. All other maps differentiate
//! w.r.t. their stored values.

use std::f64::consts::{FRAC_1_PI, PI};
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io;
use crate::math::{Rgb, Vec3};

/// Roughness floor keeping the GGX lobe and its gradient finite.
pub const R_MIN: f64 = 0.045;

/// Four per-pixel maps defining a spatially-varying material.
/// Row-major, row 0 at top; all maps share one resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct SvbrdfMaps {
    width: usize,
    height: usize,
    pub normal: Vec<[f64; 3]>,
    pub diffuse: Vec<Rgb>,
    pub specular: Vec<Rgb>,
    pub roughness: Vec<f64>,
}

/// One invariant violation found by [`SvbrdfMaps::validate`].
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub map: MapId,
    pub pixel: (usize, usize),
    pub rule: String,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum MapId {
    Normal,
    Diffuse,
    Specular,
    Roughness,
}

impl fmt::Display for MapId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MapId::Normal => "normal",
            MapId::Diffuse => "diffuse",
            MapId::Specular => "specular",
            MapId::Roughness => "roughness",
        };
        f.write_str(s)
    }
}

impl SvbrdfMaps {
    /// Uniform material, mostly for tests and initialization.
    pub fn constant(
        width: usize,
        height: usize,
        normal: [f64; 3],
        diffuse: Rgb,
        specular: Rgb,
        roughness: f64,
    ) -> Self {
        let n = width * height;
        SvbrdfMaps {
            width,
            height,
            normal: vec![normal; n],
            diffuse: vec![diffuse; n],
            specular: vec![specular; n],
            roughness: vec![roughness; n],
        }
    }

    pub fn from_parts(
        width: usize,
        height: usize,
        normal: Vec<[f64; 3]>,
        diffuse: Vec<Rgb>,
        specular: Vec<Rgb>,
        roughness: Vec<f64>,
    ) -> Result<Self> {
        let n = width * height;
        if normal.len() != n || diffuse.len() != n || specular.len() != n || roughness.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "map lengths {}/{}/{}/{} do not match {}x{}",
                normal.len(),
                diffuse.len(),
                specular.len(),
                roughness.len(),
                width,
                height
            )));
        }
        Ok(SvbrdfMaps {
            width,
            height,
            normal,
            diffuse,
            specular,
            roughness,
        })
    }

    /// Builds a material from a per-pixel closure returning
    /// (normal, diffuse, specular, roughness).
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> ([f64; 3], Rgb, Rgb, f64),
    ) -> Self {
        let mut m = SvbrdfMaps::constant(width, height, [0.0, 0.0, 1.0], [0.0; 3], [0.0; 3], R_MIN);
        for y in 0..height {
            for x in 0..width {
                let i = y * width + x;
                let (n, d, s, r) = f(x, y);
                m.normal[i] = n;
                m.diffuse[i] = d;
                m.specular[i] = s;
                m.roughness[i] = r;
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn same_size(&self, other: &SvbrdfMaps) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Checks every invariant; returns one entry per violated rule
    /// naming the map, pixel and rule. Empty means valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let expected = self.width * self.height;
        let mut check_len = |map: MapId, len: usize| {
            if len != expected {
                out.push(Violation {
                    map,
                    pixel: (0, 0),
                    rule: format!("length {} does not match {}x{}", len, self.width, self.height),
                });
            }
        };
        check_len(MapId::Normal, self.normal.len());
        check_len(MapId::Diffuse, self.diffuse.len());
        check_len(MapId::Specular, self.specular.len());
        check_len(MapId::Roughness, self.roughness.len());
        if !out.is_empty() {
            return out;
        }

        for y in 0..self.height {
            for x in 0..self.width {
                let i = self.index(x, y);
                let n = self.normal[i];
                let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                if (len - 1.0).abs() > 1e-6 {
                    out.push(Violation {
                        map: MapId::Normal,
                        pixel: (x, y),
                        rule: format!("length {} outside 1 +/- 1e-6", len),
                    });
                }
                if !(n[2] > 0.0) {
                    out.push(Violation {
                        map: MapId::Normal,
                        pixel: (x, y),
                        rule: format!("z component {} not positive", n[2]),
                    });
                }
                for (map, v) in [(MapId::Diffuse, self.diffuse[i]), (MapId::Specular, self.specular[i])] {
                    for c in 0..3 {
                        if !(0.0..=1.0).contains(&v[c]) || !v[c].is_finite() {
                            out.push(Violation {
                                map,
                                pixel: (x, y),
                                rule: format!("channel {} value {} outside [0, 1]", c, v[c]),
                            });
                        }
                    }
                }
                let r = self.roughness[i];
                if !(R_MIN..=1.0).contains(&r) || !r.is_finite() {
                    out.push(Violation {
                        map: MapId::Roughness,
                        pixel: (x, y),
                        rule: format!("value {} outside [{}, 1]", r, R_MIN),
                    });
                }
            }
        }
        out
    }

    /// Slope-channel view of the stored normal: `(nx/nz, ny/nz)`.
    pub fn slopes_at(&self, i: usize) -> [f64; 2] {
        let n = self.normal[i];
        [n[0] / n[2], n[1] / n[2]]
    }

    /// Writes the on-disk bundle: normal/diffuse/specular PFM (`PF`),
    /// roughness PFM (`Pf`) and a `material.txt` manifest.
    pub fn save_bundle(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let flat3 = |v: &Vec<[f64; 3]>| -> Vec<f64> { v.iter().flatten().copied().collect() };
        io::write_pfm(&dir.join("normal.pfm"), self.width, self.height, 3, &flat3(&self.normal))?;
        io::write_pfm(&dir.join("diffuse.pfm"), self.width, self.height, 3, &flat3(&self.diffuse))?;
        io::write_pfm(&dir.join("specular.pfm"), self.width, self.height, 3, &flat3(&self.specular))?;
        io::write_pfm(&dir.join("roughness.pfm"), self.width, self.height, 1, &self.roughness)?;
        std::fs::write(
            dir.join("material.txt"),
            format!("width={}\nheight={}\n", self.width, self.height),
        )?;
        Ok(())
    }

    pub fn load_bundle(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("material.txt");
        let manifest = std::fs::read_to_string(&manifest_path)?;
        let mut width = None;
        let mut height = None;
        for line in manifest.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Format {
                path: manifest_path.display().to_string(),
                reason: format!("expected key=value, got {:?}", line),
            })?;
            let parsed: usize = value.trim().parse().map_err(|_| Error::Format {
                path: manifest_path.display().to_string(),
                reason: format!("bad integer {:?}", value),
            })?;
            match key.trim() {
                "width" => width = Some(parsed),
                "height" => height = Some(parsed),
                other => {
                    return Err(Error::Format {
                        path: manifest_path.display().to_string(),
                        reason: format!("unknown key {:?}", other),
                    })
                }
            }
        }
        let (width, height) = match (width, height) {
            (Some(w), Some(h)) => (w, h),
            _ => {
                return Err(Error::Format {
                    path: manifest_path.display().to_string(),
                    reason: "missing width/height".into(),
                })
            }
        };

        let read3 = |name: &str| -> Result<Vec<[f64; 3]>> {
            let path = dir.join(name);
            let (w, h, c, data) = io::read_pfm(&path)?;
            if (w, h, c) != (width, height, 3) {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    reason: format!("expected {}x{}x3, got {}x{}x{}", width, height, w, h, c),
                });
            }
            Ok(data.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect())
        };
        let normal = read3("normal.pfm")?;
        let diffuse = read3("diffuse.pfm")?;
        let specular = read3("specular.pfm")?;
        let rough_path = dir.join("roughness.pfm");
        let (w, h, c, roughness) = io::read_pfm(&rough_path)?;
        if (w, h, c) != (width, height, 1) {
            return Err(Error::Format {
                path: rough_path.display().to_string(),
                reason: format!("expected {}x{}x1, got {}x{}x{}", width, height, w, h, c),
            });
        }
        SvbrdfMaps::from_parts(width, height, normal, diffuse, specular, roughness)
    }
}

/// Per-pixel quantities in the 9-channel parameter space shared by the
/// optimizer, the rendering gradients and the network heads: 2 normal
/// slopes, 3 diffuse, 3 specular, 1 roughness. Doubles as the gradient
/// container (`MapsGrad`).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamImage {
    width: usize,
    height: usize,
    pub slope: Vec<[f64; 2]>,
    pub diffuse: Vec<Rgb>,
    pub specular: Vec<Rgb>,
    pub roughness: Vec<f64>,
}

/// Gradient w.r.t. the 9 per-pixel parameters, same layout as the maps.
pub type MapsGrad = ParamImage;

/// Number of parameter channels per pixel.
pub const PARAM_CHANNELS: usize = 9;

impl ParamImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        ParamImage {
            width,
            height,
            slope: vec![[0.0; 2]; n],
            diffuse: vec![[0.0; 3]; n],
            specular: vec![[0.0; 3]; n],
            roughness: vec![0.0; n],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn same_size(&self, other: &ParamImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// `self += scale * other`.
    pub fn scaled_add(&mut self, scale: f64, other: &ParamImage) {
        assert!(self.same_size(other), "ParamImage size mismatch");
        for (a, b) in self.channels_mut().zip(other.channels()) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.channels_mut() {
            *a *= s;
        }
    }

    /// Fixed channel order: all slopes, then diffuse, specular, roughness.
    /// Error indices reported by the optimizer refer to this order.
    pub fn channels(&self) -> impl Iterator<Item = f64> + '_ {
        self.slope
            .iter()
            .flatten()
            .chain(self.diffuse.iter().flatten())
            .chain(self.specular.iter().flatten())
            .chain(self.roughness.iter())
            .copied()
    }

    pub fn channels_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.slope
            .iter_mut()
            .flatten()
            .chain(self.diffuse.iter_mut().flatten())
            .chain(self.specular.iter_mut().flatten())
            .chain(self.roughness.iter_mut())
    }

    pub fn channel_count(&self) -> usize {
        self.pixel_count() * PARAM_CHANNELS
    }
}

/// One BRDF evaluation: directions toward light/eye and the reflectance.
#[derive(Copy, Clone, Debug)]
pub struct BrdfSample {
    pub wi: Vec3,
    pub wo: Vec3,
    pub value: Rgb,
}

/// Cook-Torrance reflectance for one texel (see module docs for the
/// exact D/F/G forms). Returns zero when either direction is below the
/// shading-normal hemisphere.
pub fn eval_brdf(n: Vec3, diffuse: Rgb, specular: Rgb, roughness: f64, wi: Vec3, wo: Vec3) -> Rgb {
    let c_i = n.dot(wi);
    let c_o = n.dot(wo);
    if c_i <= 0.0 || c_o <= 0.0 {
        return [0.0; 3];
    }
    // wi + wo is symmetric bit-for-bit, so reciprocity is exact. The
    // Fresnel cosine wo.h equals |wi + wo| / 2, also symmetric.
    let s = wi + wo;
    let slen = s.length();
    let c_h = n.dot(s) / slen;
    let u = 0.5 * slen;

    let alpha = roughness * roughness;
    let a2 = alpha * alpha;
    let t = c_h * c_h * (a2 - 1.0) + 1.0;
    let d = a2 / (PI * t * t);
    let k = alpha * 0.5;
    // P(c) = G1(c) / c folds the 1/(n.w) denominators into the geometry term.
    // Multiplying the two P factors first keeps reciprocity bit-exact.
    let p = |c: f64| 1.0 / (c * (1.0 - k) + k);
    let spec_common = d * (p(c_i) * p(c_o)) * 0.25;
    let u5 = (1.0 - u).powi(5);
    [0, 1, 2].map(|c| {
        let fresnel = specular[c] + (1.0 - specular[c]) * u5;
        diffuse[c] * FRAC_1_PI + fresnel * spec_common
    })
}

/// BRDF value plus its Jacobian w.r.t. the 9 texel parameters.
/// Cross-channel albedo partials are zero, so the diffuse and specular
/// entries hold the diagonal only.
#[derive(Copy, Clone, Debug, Default)]
pub struct BrdfGrad {
    pub value: Rgb,
    /// d value[c] / d slope[j]
    pub d_slope: [[f64; 3]; 2],
    /// d value[c] / d diffuse[c]
    pub d_diffuse: [f64; 3],
    /// d value[c] / d specular[c]
    pub d_specular: [f64; 3],
    /// d value[c] / d roughness
    pub d_roughness: [f64; 3],
    /// d (n.wi) / d slope[j]; exposed for the renderer's cosine term.
    pub d_cos_i_slope: [f64; 2],
    /// n.wi under the slope-decoded normal (clamped region reports 0).
    pub cos_i: f64,
}

/// Evaluates the BRDF and its analytic parameter Jacobian at a texel
/// whose normal is decoded from slopes: `n = normalize(sx, sy, 1)`.
/// In the backfacing clamp region the value and all partials are zero.
pub fn eval_brdf_grad(
    slope: [f64; 2],
    diffuse: Rgb,
    specular: Rgb,
    roughness: f64,
    wi: Vec3,
    wo: Vec3,
) -> BrdfGrad {
    let m = Vec3::new(slope[0], slope[1], 1.0);
    let inv_len = 1.0 / m.length();
    let n = m * inv_len;
    // dn/ds_j = (e_j - n * n_j) / |m|
    let dn = [
        Vec3::new(1.0 - n.x * n.x, -n.y * n.x, -n.z * n.x) * inv_len,
        Vec3::new(-n.x * n.y, 1.0 - n.y * n.y, -n.z * n.y) * inv_len,
    ];

    let c_i = n.dot(wi);
    let c_o = n.dot(wo);
    if c_i <= 0.0 || c_o <= 0.0 {
        return BrdfGrad::default();
    }

    let s = wi + wo;
    let slen = s.length();
    let h = s * (1.0 / slen);
    let c_h = n.dot(h);
    let u = 0.5 * slen;
    let u5 = (1.0 - u).powi(5);

    let alpha = roughness * roughness;
    let a2 = alpha * alpha;
    let t = c_h * c_h * (a2 - 1.0) + 1.0;
    let d = a2 / (PI * t * t);
    let k = alpha * 0.5;
    let p_i = 1.0 / (c_i * (1.0 - k) + k);
    let p_o = 1.0 / (c_o * (1.0 - k) + k);
    let spec_common = d * (p_i * p_o) * 0.25;

    // Roughness chain: alpha = r^2, k = alpha/2, a2 = alpha^2.
    let dd_da2 = (t - 2.0 * a2 * c_h * c_h) / (PI * t * t * t);
    let dp_dk = |c: f64, p: f64| -(1.0 - c) * p * p;
    let ds_dalpha = (dd_da2 * 2.0 * alpha * p_i * p_o
        + d * (dp_dk(c_i, p_i) * p_o + p_i * dp_dk(c_o, p_o)) * 0.5)
        * 0.25;
    let ds_dr = ds_dalpha * 2.0 * roughness;

    // Normal chain through c_h, c_i, c_o.
    let dd_dch = -4.0 * a2 * c_h * (a2 - 1.0) / (PI * t * t * t);
    let dp_dc = |p: f64| -(1.0 - k) * p * p;
    let ds_dch = dd_dch * p_i * p_o * 0.25;
    let ds_dci = d * dp_dc(p_i) * p_o * 0.25;
    let ds_dco = d * p_i * dp_dc(p_o) * 0.25;

    let mut out = BrdfGrad {
        cos_i: c_i,
        ..BrdfGrad::default()
    };
    for j in 0..2 {
        let dch = h.dot(dn[j]);
        let dci = wi.dot(dn[j]);
        let dco = wo.dot(dn[j]);
        out.d_cos_i_slope[j] = dci;
        let ds_j = ds_dch * dch + ds_dci * dci + ds_dco * dco;
        for c in 0..3 {
            let fresnel = specular[c] + (1.0 - specular[c]) * u5;
            out.d_slope[j][c] = fresnel * ds_j;
        }
    }
    for c in 0..3 {
        let fresnel = specular[c] + (1.0 - specular[c]) * u5;
        out.value[c] = diffuse[c] * FRAC_1_PI + fresnel * spec_common;
        out.d_diffuse[c] = FRAC_1_PI;
        out.d_specular[c] = (1.0 - u5) * spec_common;
        out.d_roughness[c] = fresnel * ds_dr;
    }
    out
}
