//! Online generation of training pairs: mixed base materials, geometric
//! augmentation, randomized view/light conditions and degraded renders.
//!
//! Generation is a pure function of (config, seed, iteration index): each
//! iteration derives its own RNG stream, so independent generator
//! instances can run in parallel on disjoint iteration ranges and always
//! reproduce bit-identically.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{bilinear_taps, wrap_index, LdrImage, TAP_OFFSETS};
use crate::material::{SvbrdfMaps, R_MIN};
use crate::math::{cosine_hemisphere, seed_stream, Rgb, Vec3};
use crate::render::{degrade, plane_center, render, AmbientLight, DegradeParams, SceneSample};

/// Numeric ranges driving condition sampling. All ranges are inclusive
/// `(lo, hi)` pairs; the serialized key=value form lists every field with
/// its default (see `to_kv`).
#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    /// Output crop resolution in pixels.
    pub crop_size: usize,
    /// Inclusive range for the number of input images per sample.
    pub n_inputs: (usize, usize),
    /// Camera distance from the plane center, in plane widths.
    pub camera_dist: (f64, f64),
    /// Flash distance from the plane center, in plane widths.
    pub light_dist: (f64, f64),
    /// Uniform field-of-view jitter around the 40 degree default.
    pub fov_jitter_deg: f64,
    /// Flash angular falloff exponent range.
    pub falloff: (f64, f64),
    /// Log-uniform intensity multiplier around the nominal exposure that
    /// renders a fronto-parallel Lambertian 0.5 near 0.5.
    pub intensity_scale: (f64, f64),
    /// Per-channel white-balance multiplier range.
    pub white_balance: (f64, f64),
    /// Probability that a sample gets a surrounding (second) light.
    pub ambient_prob: f64,
    /// Ambient intensity cap as a fraction of the nominal flash.
    pub ambient_max_frac: f64,
    /// Additive Gaussian noise sigma range (linear radiance units).
    pub noise_sigma: (f64, f64),
    /// Geometric augmentation scale range (source units per output texel).
    pub aug_scale: (f64, f64),
    /// Ablation switch: when false, every perturbed quantity sits at its
    /// range midpoint, directions stay on the exact unit hemisphere at
    /// fixed distance, and no ambient light is added.
    pub perturbations_enabled: bool,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            crop_size: 64,
            n_inputs: (1, 5),
            camera_dist: (1.5, 3.5),
            light_dist: (1.5, 3.5),
            fov_jitter_deg: 5.0,
            falloff: (0.0, 4.0),
            intensity_scale: (0.5, 2.0),
            white_balance: (0.8, 1.2),
            ambient_prob: 0.5,
            ambient_max_frac: 0.2,
            noise_sigma: (0.0, 0.02),
            aug_scale: (0.75, 1.5),
            perturbations_enabled: true,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop_size == 0 {
            return Err(Error::InvalidParameter("crop_size must be positive".into()));
        }
        if self.n_inputs.0 < 1 || self.n_inputs.1 > 10 || self.n_inputs.0 > self.n_inputs.1 {
            return Err(Error::InvalidParameter(format!(
                "n_inputs range [{}, {}] must lie within [1, 10]",
                self.n_inputs.0, self.n_inputs.1
            )));
        }
        let ranges: [(&str, (f64, f64), f64); 6] = [
            ("camera_dist", self.camera_dist, 1e-6),
            ("light_dist", self.light_dist, 1e-6),
            ("falloff", self.falloff, 0.0),
            ("intensity_scale", self.intensity_scale, 1e-6),
            ("white_balance", self.white_balance, 1e-6),
            ("noise_sigma", self.noise_sigma, 0.0),
        ];
        for (name, (lo, hi), min_lo) in ranges {
            if !(lo >= min_lo && hi >= lo) {
                return Err(Error::InvalidParameter(format!(
                    "{} range [{}, {}] is empty or out of bounds",
                    name, lo, hi
                )));
            }
        }
        if !(self.aug_scale.0 > 0.0 && self.aug_scale.1 >= self.aug_scale.0) {
            return Err(Error::InvalidParameter("aug_scale range must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.ambient_prob) {
            return Err(Error::InvalidParameter("ambient_prob must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.ambient_max_frac) {
            return Err(Error::InvalidParameter("ambient_max_frac must be in [0, 1]".into()));
        }
        if !(0.0..=30.0).contains(&self.fov_jitter_deg) {
            return Err(Error::InvalidParameter("fov_jitter_deg must be in [0, 30]".into()));
        }
        Ok(())
    }

    /// Serializes every field as `key=value` lines, in a fixed order.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        kv("crop_size", self.crop_size.to_string());
        kv("n_inputs_min", self.n_inputs.0.to_string());
        kv("n_inputs_max", self.n_inputs.1.to_string());
        kv("camera_dist_min", self.camera_dist.0.to_string());
        kv("camera_dist_max", self.camera_dist.1.to_string());
        kv("light_dist_min", self.light_dist.0.to_string());
        kv("light_dist_max", self.light_dist.1.to_string());
        kv("fov_jitter_deg", self.fov_jitter_deg.to_string());
        kv("falloff_min", self.falloff.0.to_string());
        kv("falloff_max", self.falloff.1.to_string());
        kv("intensity_scale_min", self.intensity_scale.0.to_string());
        kv("intensity_scale_max", self.intensity_scale.1.to_string());
        kv("white_balance_min", self.white_balance.0.to_string());
        kv("white_balance_max", self.white_balance.1.to_string());
        kv("ambient_prob", self.ambient_prob.to_string());
        kv("ambient_max_frac", self.ambient_max_frac.to_string());
        kv("noise_sigma_min", self.noise_sigma.0.to_string());
        kv("noise_sigma_max", self.noise_sigma.1.to_string());
        kv("aug_scale_min", self.aug_scale.0.to_string());
        kv("aug_scale_max", self.aug_scale.1.to_string());
        kv("perturbations", self.perturbations_enabled.to_string());
        kv("seed", self.seed.to_string());
        s
    }

    /// Parses `key=value` lines ('#' starts a comment). Unknown keys are
    /// rejected by name; missing keys keep their defaults.
    pub fn from_kv(text: &str) -> Result<GenConfig> {
        let mut cfg = GenConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidParameter(format!("line {}: expected key=value, got {:?}", lineno + 1, raw))
            })?;
            cfg.set_kv(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| {
                Error::InvalidParameter(format!("key {}: cannot parse {:?}", key, v))
            })
        }
        match key {
            "crop_size" => self.crop_size = num(key, value)?,
            "n_inputs_min" => self.n_inputs.0 = num(key, value)?,
            "n_inputs_max" => self.n_inputs.1 = num(key, value)?,
            "camera_dist_min" => self.camera_dist.0 = num(key, value)?,
            "camera_dist_max" => self.camera_dist.1 = num(key, value)?,
            "light_dist_min" => self.light_dist.0 = num(key, value)?,
            "light_dist_max" => self.light_dist.1 = num(key, value)?,
            "fov_jitter_deg" => self.fov_jitter_deg = num(key, value)?,
            "falloff_min" => self.falloff.0 = num(key, value)?,
            "falloff_max" => self.falloff.1 = num(key, value)?,
            "intensity_scale_min" => self.intensity_scale.0 = num(key, value)?,
            "intensity_scale_max" => self.intensity_scale.1 = num(key, value)?,
            "white_balance_min" => self.white_balance.0 = num(key, value)?,
            "white_balance_max" => self.white_balance.1 = num(key, value)?,
            "ambient_prob" => self.ambient_prob = num(key, value)?,
            "ambient_max_frac" => self.ambient_max_frac = num(key, value)?,
            "noise_sigma_min" => self.noise_sigma.0 = num(key, value)?,
            "noise_sigma_max" => self.noise_sigma.1 = num(key, value)?,
            "aug_scale_min" => self.aug_scale.0 = num(key, value)?,
            "aug_scale_max" => self.aug_scale.1 = num(key, value)?,
            "perturbations" => self.perturbations_enabled = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            other => {
                return Err(Error::InvalidParameter(format!("unknown config key {:?}", other)))
            }
        }
        Ok(())
    }
}

/// One ground truth with its rendered, degraded observations.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub gt: SvbrdfMaps,
    pub inputs: Vec<(LdrImage, SceneSample)>,
}

impl TrainingSample {
    pub fn count(&self) -> usize {
        self.inputs.len()
    }
}

/// Convex combination of two materials: albedos and roughness blend
/// linearly, normals blend then renormalize. Endpoints are returned
/// exactly. Roughness is re-clamped to the representable floor.
pub fn mix_svbrdf(a: &SvbrdfMaps, b: &SvbrdfMaps, w: f64) -> Result<SvbrdfMaps> {
    if !a.same_size(b) {
        return Err(Error::DimensionMismatch(format!(
            "mix: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if w == 1.0 {
        return Ok(a.clone());
    }
    if w == 0.0 {
        return Ok(b.clone());
    }
    let lerp = |x: f64, y: f64| w * x + (1.0 - w) * y;
    let n = a.pixel_count();
    let mut out = SvbrdfMaps::constant(a.width(), a.height(), [0.0, 0.0, 1.0], [0.0; 3], [0.0; 3], R_MIN);
    for i in 0..n {
        let m = Vec3::new(
            lerp(a.normal[i][0], b.normal[i][0]),
            lerp(a.normal[i][1], b.normal[i][1]),
            lerp(a.normal[i][2], b.normal[i][2]),
        )
        .normalize();
        out.normal[i] = m.to_array();
        for c in 0..3 {
            out.diffuse[i][c] = lerp(a.diffuse[i][c], b.diffuse[i][c]);
            out.specular[i][c] = lerp(a.specular[i][c], b.specular[i][c]);
        }
        out.roughness[i] = lerp(a.roughness[i], b.roughness[i]).clamp(R_MIN, 1.0);
    }
    Ok(out)
}

/// Rotates, scales and crops the maps with wrap-tiled bilinear sampling.
/// `rotation` is the content rotation in radians; normal tangential
/// components are rotated along with it. `scale` is in source texels per
/// output texel; `crop_origin` is in source pixel coordinates.
pub fn augment_geometry(
    maps: &SvbrdfMaps,
    rotation: f64,
    scale: f64,
    crop_origin: (f64, f64),
    crop_size: usize,
) -> SvbrdfMaps {
    let (sw, sh) = (maps.width(), maps.height());
    let (sin_r, cos_r) = rotation.sin_cos();
    let mut out = SvbrdfMaps::constant(
        crop_size,
        crop_size,
        [0.0, 0.0, 1.0],
        [0.0; 3],
        [0.0; 3],
        R_MIN,
    );
    for y in 0..crop_size {
        for x in 0..crop_size {
            let ox = (x as f64 + 0.5) * scale;
            let oy = (y as f64 + 0.5) * scale;
            // Content rotated by +rotation means the sampling grid turns
            // the other way.
            let qx = crop_origin.0 + cos_r * ox + sin_r * oy;
            let qy = crop_origin.1 - sin_r * ox + cos_r * oy;

            let ((x0, y0), wts) = bilinear_taps(qx, qy);
            let mut normal = [0.0; 3];
            let mut diffuse = [0.0; 3];
            let mut specular = [0.0; 3];
            let mut rough = 0.0;
            for (t, &(dx, dy)) in TAP_OFFSETS.iter().enumerate() {
                let i = wrap_index(y0 + dy, sh) * sw + wrap_index(x0 + dx, sw);
                for c in 0..3 {
                    normal[c] += wts[t] * maps.normal[i][c];
                    diffuse[c] += wts[t] * maps.diffuse[i][c];
                    specular[c] += wts[t] * maps.specular[i][c];
                }
                rough += wts[t] * maps.roughness[i];
            }
            let rotated = Vec3::new(
                normal[0] * cos_r - normal[1] * sin_r,
                normal[0] * sin_r + normal[1] * cos_r,
                normal[2],
            )
            .normalize();
            let i = out.index(x, y);
            out.normal[i] = rotated.to_array();
            for c in 0..3 {
                out.diffuse[i][c] = diffuse[c].clamp(0.0, 1.0);
                out.specular[i][c] = specular[c].clamp(0.0, 1.0);
            }
            out.roughness[i] = rough.clamp(R_MIN, 1.0);
        }
    }
    out
}

fn uniform(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    range.0 + (range.1 - range.0) * rng.gen::<f64>()
}

fn mid(range: (f64, f64)) -> f64 {
    0.5 * (range.0 + range.1)
}

/// Nominal flash intensity at distance `d`: a fronto-parallel Lambertian
/// 0.5 renders as 0.5 (the inverse square and cosine cancel).
fn nominal_intensity(d: f64) -> f64 {
    std::f64::consts::PI * d * d
}

/// Draws one view/light configuration. Directions are cosine-weighted on
/// the upper hemisphere; distances, falloff, exposure and white balance
/// come from the config ranges. With perturbations disabled, every
/// perturbed scalar takes its range midpoint (fov exactly 40, unit
/// exposure and white balance) while directions stay random.
///
/// Draw order (fixed for reproducibility): camera dir, camera dist,
/// light dir, light dist, fov, falloff, intensity scale, white balance.
pub fn sample_scene(cfg: &GenConfig, rng: &mut impl Rng) -> SceneSample {
    let center = plane_center();
    let cam_dir = cosine_hemisphere(rng.gen(), rng.gen());
    let light_dir = cosine_hemisphere(rng.gen(), rng.gen());
    if cfg.perturbations_enabled {
        let cam_dist = uniform(rng, cfg.camera_dist);
        let light_dist = uniform(rng, cfg.light_dist);
        let fov = 40.0 + uniform(rng, (-cfg.fov_jitter_deg, cfg.fov_jitter_deg));
        let falloff = uniform(rng, cfg.falloff);
        let scale = uniform(rng, (cfg.intensity_scale.0.ln(), cfg.intensity_scale.1.ln())).exp();
        let nominal = nominal_intensity(light_dist) * scale;
        let intensity = [
            nominal * uniform(rng, cfg.white_balance),
            nominal * uniform(rng, cfg.white_balance),
            nominal * uniform(rng, cfg.white_balance),
        ];
        SceneSample {
            camera_pos: center + cam_dir * cam_dist,
            light_pos: center + light_dir * light_dist,
            light_intensity: intensity,
            falloff_exponent: falloff,
            fov_deg: fov,
            ambient: None,
        }
    } else {
        let light_dist = mid(cfg.light_dist);
        let nominal = nominal_intensity(light_dist);
        SceneSample {
            camera_pos: center + cam_dir * mid(cfg.camera_dist),
            light_pos: center + light_dir * light_dist,
            light_intensity: [nominal; 3],
            falloff_exponent: mid(cfg.falloff),
            fov_deg: 40.0,
            ambient: None,
        }
    }
}

/// Renders `count` degraded observations of `gt` under freshly drawn
/// scenes, all sharing one optional ambient light.
pub fn render_views(
    gt: &SvbrdfMaps,
    count: usize,
    cfg: &GenConfig,
    rng: &mut impl Rng,
    ambient: Option<AmbientLight>,
) -> Result<Vec<(LdrImage, SceneSample)>> {
    let mut inputs = Vec::with_capacity(count);
    for _ in 0..count {
        let mut scene = sample_scene(cfg, rng);
        scene.ambient = ambient.clone();
        let noise_sigma = if cfg.perturbations_enabled {
            uniform(rng, cfg.noise_sigma)
        } else {
            mid(cfg.noise_sigma)
        };
        let degrade_seed: u64 = rng.gen();
        let radiance = render(gt, &scene)?;
        let params = DegradeParams {
            noise_sigma,
            seed: degrade_seed,
            ..DegradeParams::default()
        };
        inputs.push((degrade(&radiance, &params), scene));
    }
    Ok(inputs)
}

/// Streams unique training samples from a base material library.
pub struct Generator {
    cfg: GenConfig,
    materials: Vec<SvbrdfMaps>,
}

impl Generator {
    pub fn new(cfg: GenConfig, materials: Vec<SvbrdfMaps>) -> Result<Self> {
        cfg.validate()?;
        if materials.len() < 2 {
            return Err(Error::EmptyInput("material library needs at least 2 entries"));
        }
        Ok(Generator { cfg, materials })
    }

    pub fn config(&self) -> &GenConfig {
        &self.cfg
    }

    /// Produces the sample for one iteration. Pure function of
    /// (config, seed, iteration): repeated calls are bit-identical.
    pub fn generate(&self, iteration: u64) -> Result<TrainingSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_stream(self.cfg.seed, iteration));
        let a = rng.gen_range(0..self.materials.len());
        let b = loop {
            let b = rng.gen_range(0..self.materials.len());
            if b != a {
                break b;
            }
        };
        let w: f64 = rng.gen();
        let mixed = mix_svbrdf(&self.materials[a], &self.materials[b], w)?;

        let rotation = rng.gen::<f64>() * std::f64::consts::TAU;
        let scale = uniform(&mut rng, self.cfg.aug_scale);
        let origin = (
            rng.gen::<f64>() * mixed.width() as f64,
            rng.gen::<f64>() * mixed.height() as f64,
        );
        let gt = augment_geometry(&mixed, rotation, scale, origin, self.cfg.crop_size);

        let count = rng.gen_range(self.cfg.n_inputs.0..=self.cfg.n_inputs.1);
        let ambient = self.draw_ambient(&mut rng);
        let inputs = render_views(&gt, count, &self.cfg, &mut rng, ambient)?;
        Ok(TrainingSample { gt, inputs })
    }

    /// The surrounding light is drawn once per sample and shared by all
    /// of its inputs. Disabled in ablation mode.
    fn draw_ambient(&self, rng: &mut impl Rng) -> Option<AmbientLight> {
        if !self.cfg.perturbations_enabled {
            return None;
        }
        let present = rng.gen::<f64>() < self.cfg.ambient_prob;
        if !present {
            return None;
        }
        let dir = cosine_hemisphere(rng.gen(), rng.gen());
        let dist = uniform(rng, self.cfg.light_dist);
        let frac = rng.gen::<f64>() * self.cfg.ambient_max_frac;
        let nominal = nominal_intensity(dist) * frac;
        let intensity: Rgb = [
            nominal * uniform(rng, self.cfg.white_balance),
            nominal * uniform(rng, self.cfg.white_balance),
            nominal * uniform(rng, self.cfg.white_balance),
        ];
        Some(AmbientLight {
            pos: plane_center() + dir * dist,
            intensity,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_materials(size: usize) -> Vec<SvbrdfMaps> {
        let a = SvbrdfMaps::from_fn(size, size, |x, y| {
            let n = Vec3::new(0.1 * ((x % 3) as f64 - 1.0), 0.1 * ((y % 2) as f64), 1.0).normalize();
            (
                n.to_array(),
                [((x + y) % 2) as f64 * 0.6 + 0.2, 0.3, 0.4],
                [0.04; 3],
                0.3 + 0.02 * (x % 5) as f64,
            )
        });
        let b = SvbrdfMaps::from_fn(size, size, |x, y| {
            (
                [0.0, 0.0, 1.0],
                [0.7, 0.2 + 0.05 * ((y % 4) as f64), 0.1],
                [0.08, 0.06, 0.04],
                0.6 - 0.03 * ((x % 3) as f64),
            )
        });
        vec![a, b]
    }

    #[test]
    fn mix_endpoints_are_exact() {
        let m = two_materials(8);
        assert_eq!(mix_svbrdf(&m[0], &m[1], 1.0).unwrap(), m[0]);
        assert_eq!(mix_svbrdf(&m[0], &m[1], 0.0).unwrap(), m[1]);
    }

    #[test]
    fn mix_normals_renormalize() {
        let a = SvbrdfMaps::constant(1, 1, [0.0, 0.0, 1.0], [0.5; 3], [0.5; 3], 0.5);
        // Degenerate test vector, only valid as raw data.
        let b = SvbrdfMaps::constant(1, 1, [1.0, 0.0, 0.0], [0.5; 3], [0.5; 3], 0.5);
        let m = mix_svbrdf(&a, &b, 0.5).unwrap();
        let e = 1.0 / 2.0f64.sqrt();
        assert!((m.normal[0][0] - e).abs() < 1e-6);
        assert!((m.normal[0][1]).abs() < 1e-12);
        assert!((m.normal[0][2] - e).abs() < 1e-6);
        assert!((m.normal[0][0] - 0.70711).abs() < 1e-5);
    }

    #[test]
    fn mix_rejects_size_mismatch() {
        let a = SvbrdfMaps::constant(2, 2, [0.0, 0.0, 1.0], [0.5; 3], [0.5; 3], 0.5);
        let b = SvbrdfMaps::constant(3, 2, [0.0, 0.0, 1.0], [0.5; 3], [0.5; 3], 0.5);
        assert!(mix_svbrdf(&a, &b, 0.5).is_err());
    }

    #[test]
    fn augment_identity() {
        let m = &two_materials(8)[0];
        let out = augment_geometry(m, 0.0, 1.0, (0.0, 0.0), 8);
        for i in 0..m.pixel_count() {
            for c in 0..3 {
                assert!((m.normal[i][c] - out.normal[i][c]).abs() < 1e-12);
                assert!((m.diffuse[i][c] - out.diffuse[i][c]).abs() < 1e-12);
            }
            assert!((m.roughness[i] - out.roughness[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn augment_quarter_turn_rotates_slopes() {
        let n = Vec3::new(0.2, 0.1, 1.0).normalize();
        let m = SvbrdfMaps::constant(8, 8, n.to_array(), [0.5; 3], [0.04; 3], 0.5);
        let out = augment_geometry(&m, std::f64::consts::FRAC_PI_2, 1.0, (0.0, 0.0), 8);
        // (sx, sy) -> (-sy, sx)
        let s = [n.x / n.z, n.y / n.z];
        let got = out.slopes_at(0);
        assert!((got[0] + s[1]).abs() < 1e-9, "{:?}", got);
        assert!((got[1] - s[0]).abs() < 1e-9, "{:?}", got);
    }

    #[test]
    fn augment_matches_nearest_reference_away_from_edges() {
        // Checkerboard with 8-texel cells; away from cell boundaries a
        // bilinear tap sees four equal texels, so it must agree with an
        // independent nearest-neighbor resampler exactly.
        let cells = 8;
        let size = 64;
        let board = SvbrdfMaps::from_fn(size, size, |x, y| {
            let v = if ((x / cells) + (y / cells)) % 2 == 0 { 0.9 } else { 0.1 };
            ([0.0, 0.0, 1.0], [v; 3], [0.04; 3], 0.5)
        });
        let rotation = 0.3;
        let scale = 1.5;
        let origin = (5.0, 9.0);
        let out = augment_geometry(&board, rotation, scale, origin, 32);

        let (sin_r, cos_r) = rotation.sin_cos();
        let mut compared = 0;
        for y in 0..32 {
            for x in 0..32 {
                let ox = (x as f64 + 0.5) * scale;
                let oy = (y as f64 + 0.5) * scale;
                let qx = origin.0 + cos_r * ox + sin_r * oy;
                let qy = origin.1 - sin_r * ox + cos_r * oy;
                // Distance to the nearest cell boundary in source texels.
                let margin = |q: f64| {
                    let f = (q / cells as f64).fract();
                    let f = if f < 0.0 { f + 1.0 } else { f };
                    f.min(1.0 - f) * cells as f64
                };
                if margin(qx) < 1.5 || margin(qy) < 1.5 {
                    continue;
                }
                let nearest = |q: f64, m: usize| wrap_index((q - 0.5).round() as i64, m);
                let i = nearest(qy, size) * size + nearest(qx, size);
                let expect = board.diffuse[i][0];
                let got = out.diffuse[out.index(x, y)][0];
                assert!((got - expect).abs() < 1e-6, "({}, {}): {} vs {}", x, y, got, expect);
                compared += 1;
            }
        }
        assert!(compared > 200, "only {} interior texels compared", compared);
    }

    #[test]
    fn sampled_scene_respects_hemisphere() {
        let cfg = GenConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let s = sample_scene(&cfg, &mut rng);
            assert!(s.camera_pos.z > 0.0);
            assert!(s.light_pos.z > 0.0);
            s.validate().unwrap();
        }
    }

    #[test]
    fn ablation_mode_pins_fov_and_exposure() {
        let cfg = GenConfig {
            perturbations_enabled: false,
            ..GenConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_scene(&cfg, &mut rng);
        assert_eq!(s.fov_deg, 40.0);
        assert_eq!(s.falloff_exponent, 2.0);
        let d = (s.light_pos - plane_center()).length();
        assert!((d - 2.5).abs() < 1e-12);
        assert!((s.light_intensity[0] - std::f64::consts::PI * 6.25).abs() < 1e-9);
    }

    #[test]
    fn sample_scene_is_deterministic() {
        let cfg = GenConfig::default();
        let a = sample_scene(&cfg, &mut ChaCha8Rng::seed_from_u64(42));
        let b = sample_scene(&cfg, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
    }

    #[test]
    fn camera_direction_mean_matches_cosine_hemisphere() {
        let cfg = GenConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut mean_z = 0.0;
        let n = 10_000;
        for _ in 0..n {
            let s = sample_scene(&cfg, &mut rng);
            let dir = (s.camera_pos - plane_center()).normalize();
            mean_z += dir.z;
        }
        mean_z /= n as f64;
        assert!((mean_z - 2.0 / 3.0).abs() < 0.02, "mean z {}", mean_z);
    }

    #[test]
    fn generator_needs_two_materials() {
        let m = two_materials(8);
        assert!(Generator::new(GenConfig::default(), vec![m[0].clone()]).is_err());
    }

    #[test]
    fn generated_sample_is_valid_and_in_range() {
        let cfg = GenConfig {
            crop_size: 8,
            n_inputs: (1, 3),
            ..GenConfig::default()
        };
        let g = Generator::new(cfg, two_materials(16)).unwrap();
        for it in 0..4 {
            let s = g.generate(it).unwrap();
            assert!(s.gt.validate().is_empty());
            assert!((1..=3).contains(&s.count()));
            for (img, scene) in &s.inputs {
                scene.validate().unwrap();
                for p in img.pixels() {
                    for c in 0..3 {
                        assert!((0.0..=1.0).contains(&p[c]));
                        // On the 8-bit grid.
                        let q = p[c] * 255.0;
                        assert!((q - q.round()).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn ambient_is_shared_within_a_sample() {
        let cfg = GenConfig {
            crop_size: 8,
            n_inputs: (3, 5),
            ambient_prob: 1.0,
            ..GenConfig::default()
        };
        let g = Generator::new(cfg, two_materials(16)).unwrap();
        let s = g.generate(0).unwrap();
        let first = s.inputs[0].1.ambient.clone().expect("ambient forced on");
        for (_, scene) in &s.inputs {
            assert_eq!(scene.ambient.as_ref(), Some(&first));
        }
    }

    #[test]
    fn single_input_range_yields_one_image() {
        let cfg = GenConfig {
            crop_size: 8,
            n_inputs: (1, 1),
            ..GenConfig::default()
        };
        let g = Generator::new(cfg, two_materials(16)).unwrap();
        assert_eq!(g.generate(3).unwrap().count(), 1);
    }

    #[test]
    fn generation_is_bitwise_reproducible() {
        let cfg = GenConfig {
            crop_size: 8,
            seed: 7,
            ..GenConfig::default()
        };
        let g = Generator::new(cfg.clone(), two_materials(16)).unwrap();
        let g2 = Generator::new(cfg, two_materials(16)).unwrap();
        let a = g.generate(7).unwrap();
        let b = g2.generate(7).unwrap();
        assert_eq!(a.gt, b.gt);
        assert_eq!(a.inputs.len(), b.inputs.len());
        for ((ia, sa), (ib, sb)) in a.inputs.iter().zip(&b.inputs) {
            assert_eq!(ia, ib);
            assert_eq!(sa, sb);
        }
    }

    #[test]
    fn kv_round_trip_and_unknown_key() {
        let cfg = GenConfig {
            crop_size: 48,
            noise_sigma: (0.001, 0.004),
            perturbations_enabled: false,
            seed: 99,
            ..GenConfig::default()
        };
        let text = cfg.to_kv();
        let back = GenConfig::from_kv(&text).unwrap();
        assert_eq!(cfg, back);
        let err = GenConfig::from_kv("bogus_key=1\n").unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{}", err);
    }
}
