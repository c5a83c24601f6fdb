//! Point-flash renderer with analytic gradients and LDR degradation.
//!
//! The material occupies the unit square on z = 0; texel (i, j) of a
//! W x H map shades the surface point ((i+0.5)/W, (j+0.5)/H, 0). Images
//! are rectified, so the texel-to-point mapping is orthographic — no
//! perspective is simulated. The flash is a point light whose axis aims
//! at the plane center, with angular falloff `max(cos phi, 0)^e`; an
//! optional second light models the surrounding environment (no angular
//! falloff). Texels are shaded independently: no shadows, no parallax.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{LdrImage, RadianceImage};
use crate::material::{eval_brdf, eval_brdf_grad, MapsGrad, SvbrdfMaps};
use crate::math::{seed_stream, Rgb, Vec3};

/// Display gamma assumed for LDR images throughout the toolkit.
pub const DEFAULT_GAMMA: f64 = 2.2;

/// One view/light configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    /// Camera position, meters; z > 0.
    pub camera_pos: Vec3,
    /// Flash position, meters; z > 0.
    pub light_pos: Vec3,
    /// RGB radiant intensity of the flash.
    pub light_intensity: Rgb,
    /// Angular falloff exponent of the flash (0 = isotropic).
    pub falloff_exponent: f64,
    /// Field of view in degrees; affects condition sampling only, not
    /// projection (renders are rectified/orthographic).
    pub fov_deg: f64,
    /// Optional environment light, fixed per capture session.
    pub ambient: Option<AmbientLight>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AmbientLight {
    pub pos: Vec3,
    pub intensity: Rgb,
}

impl SceneSample {
    /// Fronto-parallel flash at unit distance above the plane center,
    /// scaled so a Lambertian albedo renders as its own value.
    pub fn frontal(intensity_scale: f64) -> Self {
        SceneSample {
            camera_pos: Vec3::new(0.5, 0.5, 2.0),
            light_pos: Vec3::new(0.5, 0.5, 1.0),
            light_intensity: [std::f64::consts::PI * intensity_scale; 3],
            falloff_exponent: 0.0,
            fov_deg: 40.0,
            ambient: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.camera_pos.z > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "camera_pos.z must be positive, got {}",
                self.camera_pos.z
            )));
        }
        if !(self.light_pos.z > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "light_pos.z must be positive, got {}",
                self.light_pos.z
            )));
        }
        if self.light_intensity.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidParameter("light_intensity must be >= 0".into()));
        }
        if !(self.falloff_exponent >= 0.0) {
            return Err(Error::InvalidParameter("falloff_exponent must be >= 0".into()));
        }
        if !(10.0..=90.0).contains(&self.fov_deg) {
            return Err(Error::InvalidParameter(format!(
                "fov_deg {} outside [10, 90]",
                self.fov_deg
            )));
        }
        if let Some(a) = &self.ambient {
            if !(a.pos.z > 0.0) || a.intensity.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                return Err(Error::InvalidParameter("invalid ambient light".into()));
            }
        }
        Ok(())
    }
}

/// LDR degradation parameters. Applied in order: additive Gaussian noise
/// (linear radiance), clipping, display gamma, quantization.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradeParams {
    pub noise_sigma: f64,
    pub clip: bool,
    pub gamma: f64,
    pub quantize_bits: u32,
    pub seed: u64,
}

impl Default for DegradeParams {
    fn default() -> Self {
        DegradeParams {
            noise_sigma: 0.0,
            clip: true,
            gamma: DEFAULT_GAMMA,
            quantize_bits: 8,
            seed: 0,
        }
    }
}

pub(crate) fn plane_center() -> Vec3 {
    Vec3::new(0.5, 0.5, 0.0)
}

fn texel_point(width: usize, height: usize, x: usize, y: usize) -> Vec3 {
    Vec3::new(
        (x as f64 + 0.5) / width as f64,
        (y as f64 + 0.5) / height as f64,
        0.0,
    )
}

struct Light {
    pos: Vec3,
    intensity: Rgb,
    falloff_exponent: f64,
    axis: Vec3,
}

fn scene_lights(scene: &SceneSample) -> Vec<Light> {
    let mut lights = vec![Light {
        pos: scene.light_pos,
        intensity: scene.light_intensity,
        falloff_exponent: scene.falloff_exponent,
        axis: (plane_center() - scene.light_pos).normalize(),
    }];
    if let Some(a) = &scene.ambient {
        lights.push(Light {
            pos: a.pos,
            intensity: a.intensity,
            falloff_exponent: 0.0,
            axis: (plane_center() - a.pos).normalize(),
        });
    }
    lights
}

/// Renders the maps under one scene to linear radiance.
pub fn render(maps: &SvbrdfMaps, scene: &SceneSample) -> Result<RadianceImage> {
    check_maps(maps)?;
    let (w, h) = (maps.width(), maps.height());
    let lights = scene_lights(scene);
    let pixels: Vec<Rgb> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let p = texel_point(w, h, x, y);
            let n = Vec3::from_array(maps.normal[i]);
            let wo = (scene.camera_pos - p).normalize();
            let mut out = [0.0; 3];
            for light in &lights {
                let to_light = light.pos - p;
                let d2 = to_light.length_squared();
                let wi = to_light * (1.0 / d2.sqrt());
                let cos_i = n.dot(wi);
                if cos_i <= 0.0 {
                    continue;
                }
                let f = eval_brdf(n, maps.diffuse[i], maps.specular[i], maps.roughness[i], wi, wo);
                let fall = falloff(light, wi);
                let geom = fall / d2 * cos_i;
                for c in 0..3 {
                    out[c] += f[c] * light.intensity[c] * geom;
                }
            }
            out
        })
        .collect();
    RadianceImage::from_pixels(w, h, pixels)
}

fn falloff(light: &Light, wi: Vec3) -> f64 {
    // cos of the angle between the flash axis and the direction to the
    // shaded point; wi points *toward* the light.
    let c = light.axis.dot(-wi).max(0.0);
    c.powf(light.falloff_exponent)
}

/// Chain-rule contraction of a per-pixel RGB cotangent with the texel
/// Jacobians; texels are independent so the result has the maps' layout.
/// Normal gradients are reported in slope space (see [`crate::material`]).
pub fn render_grad(maps: &SvbrdfMaps, scene: &SceneSample, upstream: &RadianceImage) -> Result<MapsGrad> {
    check_maps(maps)?;
    if upstream.width() != maps.width() || upstream.height() != maps.height() {
        return Err(Error::DimensionMismatch(format!(
            "upstream {}x{} vs maps {}x{}",
            upstream.width(),
            upstream.height(),
            maps.width(),
            maps.height()
        )));
    }
    let (w, h) = (maps.width(), maps.height());
    let lights = scene_lights(scene);
    let per_pixel: Vec<([f64; 2], Rgb, Rgb, f64)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let p = texel_point(w, h, x, y);
            let slope = maps.slopes_at(i);
            let wo = (scene.camera_pos - p).normalize();
            let up = upstream.pixels()[i];
            let mut g_slope = [0.0; 2];
            let mut g_diffuse = [0.0; 3];
            let mut g_specular = [0.0; 3];
            let mut g_rough = 0.0;
            for light in &lights {
                let to_light = light.pos - p;
                let d2 = to_light.length_squared();
                let wi = to_light * (1.0 / d2.sqrt());
                let g = eval_brdf_grad(slope, maps.diffuse[i], maps.specular[i], maps.roughness[i], wi, wo);
                if g.cos_i <= 0.0 {
                    continue;
                }
                let fall_over_d2 = falloff(light, wi) / d2;
                let geom = fall_over_d2 * g.cos_i;
                for c in 0..3 {
                    let weight = up[c] * light.intensity[c];
                    // L_c = f_c * I_c * fall/d^2 * cos_i; both f and cos_i
                    // depend on the slopes.
                    g_diffuse[c] += weight * g.d_diffuse[c] * geom;
                    g_specular[c] += weight * g.d_specular[c] * geom;
                    g_rough += weight * g.d_roughness[c] * geom;
                    for j in 0..2 {
                        g_slope[j] += weight
                            * (g.d_slope[j][c] * geom + g.value[c] * fall_over_d2 * g.d_cos_i_slope[j]);
                    }
                }
            }
            (g_slope, g_diffuse, g_specular, g_rough)
        })
        .collect();

    let mut grad = MapsGrad::zeros(w, h);
    for (i, (s, d, sp, r)) in per_pixel.into_iter().enumerate() {
        grad.slope[i] = s;
        grad.diffuse[i] = d;
        grad.specular[i] = sp;
        grad.roughness[i] = r;
    }
    Ok(grad)
}

/// Applies the LDR degradation pipeline. The noise stream is derived per
/// pixel from (seed, pixel index), so parallel and serial execution are
/// bit-identical. The quantizer saturates, keeping outputs in [0, 1].
pub fn degrade(img: &RadianceImage, p: &DegradeParams) -> LdrImage {
    let (w, h) = (img.width(), img.height());
    let levels = ((1u32 << p.quantize_bits) - 1) as f64;
    let inv_gamma = 1.0 / p.gamma;
    let pixels: Vec<Rgb> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let mut v = img.pixels()[i];
            if p.noise_sigma > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed_stream(p.seed, i as u64));
                for c in 0..3 {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    v[c] += p.noise_sigma * n;
                }
            }
            for c in 0..3 {
                let mut x = v[c].max(0.0);
                if p.clip {
                    x = x.min(1.0);
                }
                x = x.powf(inv_gamma);
                v[c] = ((x * levels).round().clamp(0.0, levels)) / levels;
            }
            v
        })
        .collect();
    LdrImage::from_pixels(w, h, pixels).expect("degrade preserves dimensions")
}

/// Elementwise `x^gamma`, undoing the display encoding.
pub fn invert_gamma(img: &LdrImage, gamma: f64) -> RadianceImage {
    img.to_linear(gamma)
}

fn check_maps(maps: &SvbrdfMaps) -> Result<()> {
    let n = maps.pixel_count();
    if maps.normal.len() != n
        || maps.diffuse.len() != n
        || maps.specular.len() != n
        || maps.roughness.len() != n
    {
        return Err(Error::DimensionMismatch("SVBRDF map lengths disagree".into()));
    }
    Ok(())
}
