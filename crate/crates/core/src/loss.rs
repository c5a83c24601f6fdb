//! Training objective: log-space l1 rendering loss plus weighted per-map
//! l1 terms, and the total-variation regularizer used by the classical
//! optimizer. All gradients are reported in the 9-channel parameter
//! space of [`crate::material::ParamImage`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::RadianceImage;
use crate::material::{MapsGrad, SvbrdfMaps};
use crate::math::{cosine_hemisphere, perturb_direction, Vec3};
use crate::render::{plane_center, render, render_grad, SceneSample};

/// Weights and constants of the objective. The rendering term has unit
/// weight and each map term weighs 0.1.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub w_render: f64,
    pub w_map: f64,
    pub n_render_configs: usize,
    pub log_eps: f64,
    /// Used only by the inverse optimizer.
    pub tv_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_render: 1.0,
            w_map: 0.1,
            n_render_configs: 9,
            log_eps: 0.01,
            tv_weight: 0.01,
        }
    }
}

/// The four per-map l1 values, in map order.
#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct MapLosses {
    pub normal: f64,
    pub diffuse: f64,
    pub specular: f64,
    pub roughness: f64,
}

impl MapLosses {
    pub fn sum(&self) -> f64 {
        self.normal + self.diffuse + self.specular + self.roughness
    }
}

fn check_pair(pred: &SvbrdfMaps, gt: &SvbrdfMaps) -> Result<()> {
    if !pred.same_size(gt) {
        return Err(Error::DimensionMismatch(format!(
            "pred {}x{} vs gt {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    Ok(())
}

/// Mean l1 distance between log renderings of `pred` and `gt` over the
/// given configurations, with its gradient w.r.t. `pred`. Ties carry a
/// zero subgradient.
pub fn render_loss(
    pred: &SvbrdfMaps,
    gt: &SvbrdfMaps,
    configs: &[SceneSample],
) -> Result<(f64, MapsGrad)> {
    check_pair(pred, gt)?;
    if configs.is_empty() {
        return Err(Error::EmptyInput("render_loss needs at least one configuration"));
    }
    let eps = LossWeights::default().log_eps;
    render_loss_with_eps(pred, gt, configs, eps)
}

pub fn render_loss_with_eps(
    pred: &SvbrdfMaps,
    gt: &SvbrdfMaps,
    configs: &[SceneSample],
    log_eps: f64,
) -> Result<(f64, MapsGrad)> {
    check_pair(pred, gt)?;
    if configs.is_empty() {
        return Err(Error::EmptyInput("render_loss needs at least one configuration"));
    }
    let count = (configs.len() * pred.pixel_count() * 3) as f64;
    let mut total = 0.0;
    let mut grad = MapsGrad::zeros(pred.width(), pred.height());
    for scene in configs {
        let lp = render(pred, scene)?;
        let lg = render(gt, scene)?;
        let mut upstream = RadianceImage::new(pred.width(), pred.height());
        for (i, u) in upstream.pixels_mut().iter_mut().enumerate() {
            let p = lp.pixels()[i];
            let g = lg.pixels()[i];
            for c in 0..3 {
                let diff = (p[c] + log_eps).ln() - (g[c] + log_eps).ln();
                total += diff.abs();
                let sign = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                u[c] = sign / ((p[c] + log_eps) * count);
            }
        }
        grad.scaled_add(1.0, &render_grad(pred, scene, &upstream)?);
    }
    Ok((total / count, grad))
}

/// Mean absolute difference per map (normals compared as 3-vectors).
/// The returned gradient is the sum of the four terms; they touch
/// disjoint parameter channels, so each block is one map's gradient.
pub fn map_losses(pred: &SvbrdfMaps, gt: &SvbrdfMaps) -> Result<(MapLosses, MapsGrad)> {
    check_pair(pred, gt)?;
    let npix = pred.pixel_count() as f64;
    let mut losses = MapLosses::default();
    let mut grad = MapsGrad::zeros(pred.width(), pred.height());
    let sign = |d: f64| {
        if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    for i in 0..pred.pixel_count() {
        // Normal: l1 on the stored 3-vectors (exactly zero at equality),
        // chained back to the slope channels for the gradient.
        let n = Vec3::from_array(pred.normal[i]);
        let s = pred.slopes_at(i);
        let inv_len = 1.0 / Vec3::new(s[0], s[1], 1.0).length();
        let dn = [
            Vec3::new(1.0 - n.x * n.x, -n.y * n.x, -n.z * n.x) * inv_len,
            Vec3::new(-n.x * n.y, 1.0 - n.y * n.y, -n.z * n.y) * inv_len,
        ];
        let gn = gt.normal[i];
        let np = pred.normal[i];
        for k in 0..3 {
            let d = np[k] - gn[k];
            losses.normal += d.abs();
            let sg = sign(d) / (npix * 3.0);
            for j in 0..2 {
                let dnj = [dn[j].x, dn[j].y, dn[j].z];
                grad.slope[i][j] += sg * dnj[k];
            }
        }
        for c in 0..3 {
            let d = pred.diffuse[i][c] - gt.diffuse[i][c];
            losses.diffuse += d.abs();
            grad.diffuse[i][c] += sign(d) / (npix * 3.0);
            let d = pred.specular[i][c] - gt.specular[i][c];
            losses.specular += d.abs();
            grad.specular[i][c] += sign(d) / (npix * 3.0);
        }
        let d = pred.roughness[i] - gt.roughness[i];
        losses.roughness += d.abs();
        grad.roughness[i] += sign(d) / npix;
    }
    losses.normal /= npix * 3.0;
    losses.diffuse /= npix * 3.0;
    losses.specular /= npix * 3.0;
    losses.roughness /= npix;
    Ok((losses, grad))
}

/// `w_render * render + w_map * (normal + diffuse + specular + roughness)`.
pub fn total_loss(
    pred: &SvbrdfMaps,
    gt: &SvbrdfMaps,
    configs: &[SceneSample],
    weights: &LossWeights,
) -> Result<(f64, MapsGrad)> {
    let (render_term, render_g) = render_loss_with_eps(pred, gt, configs, weights.log_eps)?;
    let (maps_term, maps_g) = map_losses(pred, gt)?;
    let mut grad = render_g;
    grad.scale(weights.w_render);
    grad.scaled_add(weights.w_map, &maps_g);
    Ok((weights.w_render * render_term + weights.w_map * maps_term.sum(), grad))
}

/// Anisotropic total variation of one scalar field: the sum of absolute
/// forward differences, normalized by (pixels * 2 terms). Boundary
/// differences are zero.
pub fn tv_scalar_field(width: usize, height: usize, values: &[f64]) -> f64 {
    assert_eq!(values.len(), width * height);
    let mut sum = 0.0;
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if x + 1 < width {
                sum += (values[i + 1] - values[i]).abs();
            }
            if y + 1 < height {
                sum += (values[i + width] - values[i]).abs();
            }
        }
    }
    sum / ((width * height) as f64 * 2.0)
}

/// Mean anisotropic TV over the four maps (normals via their slope
/// channels). Gradients use a zero subgradient at ties and flow to the
/// 9 parameter channels directly.
pub fn tv_loss(maps: &SvbrdfMaps) -> (f64, MapsGrad) {
    let (w, h) = (maps.width(), maps.height());
    let mut grad = MapsGrad::zeros(w, h);
    let mut total = 0.0;
    // (channel range, channels in map)
    let groups: [(std::ops::Range<usize>, f64); 4] =
        [(0..2, 2.0), (2..5, 3.0), (5..8, 3.0), (8..9, 1.0)];
    let npix = (w * h) as f64;
    for (range, nch) in groups {
        let scale = 1.0 / (4.0 * npix * nch * 2.0);
        let mut map_sum = 0.0;
        for ch in range {
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    if x + 1 < w {
                        let d = param_value(maps, i + 1, ch) - param_value(maps, i, ch);
                        map_sum += d.abs();
                        let s = sign0(d);
                        *param_slot(&mut grad, i + 1, ch) += s * scale;
                        *param_slot(&mut grad, i, ch) -= s * scale;
                    }
                    if y + 1 < h {
                        let d = param_value(maps, i + w, ch) - param_value(maps, i, ch);
                        map_sum += d.abs();
                        let s = sign0(d);
                        *param_slot(&mut grad, i + w, ch) += s * scale;
                        *param_slot(&mut grad, i, ch) -= s * scale;
                    }
                }
            }
        }
        total += map_sum / (npix * nch * 2.0);
    }
    (total / 4.0, grad)
}

fn sign0(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Parameter channel c of pixel i: 0-1 slopes, 2-4 diffuse, 5-7 specular,
/// 8 roughness.
fn param_value(maps: &SvbrdfMaps, i: usize, ch: usize) -> f64 {
    match ch {
        0 | 1 => maps.slopes_at(i)[ch],
        2..=4 => maps.diffuse[i][ch - 2],
        5..=7 => maps.specular[i][ch - 5],
        8 => maps.roughness[i],
        _ => unreachable!(),
    }
}

fn param_slot<'a>(grad: &'a mut MapsGrad, i: usize, ch: usize) -> &'a mut f64 {
    match ch {
        0 | 1 => &mut grad.slope[i][ch],
        2..=4 => &mut grad.diffuse[i][ch - 2],
        5..=7 => &mut grad.specular[i][ch - 5],
        8 => &mut grad.roughness[i],
        _ => unreachable!(),
    }
}

/// Draws rendering configurations for the loss: two thirds near-specular
/// (light at the view's mirror direction about +z, jittered up to 5
/// degrees), the rest independent cosine-weighted pairs. Clean renders:
/// nominal exposure, no falloff, no ambient.
pub fn sample_loss_configs(n: usize, rng: &mut impl Rng) -> Vec<SceneSample> {
    let center = plane_center();
    let n_spec = n * 2 / 3;
    let dist = |rng: &mut dyn rand::RngCore| 1.5 + 2.0 * rng.gen::<f64>();
    (0..n)
        .map(|i| {
            let cam_dir = cosine_hemisphere(rng.gen(), rng.gen());
            let cam_dist = dist(rng);
            let light_dir = if i < n_spec {
                let mirror = Vec3::new(-cam_dir.x, -cam_dir.y, cam_dir.z);
                let angle = rng.gen::<f64>() * 5.0_f64.to_radians();
                let phi = rng.gen::<f64>() * std::f64::consts::TAU;
                let mut d = perturb_direction(mirror, angle, phi);
                if d.z < 0.01 {
                    d.z = 0.01;
                    d = d.normalize();
                }
                d
            } else {
                cosine_hemisphere(rng.gen(), rng.gen())
            };
            let light_dist = dist(rng);
            SceneSample {
                camera_pos: center + cam_dir * cam_dist,
                light_pos: center + light_dir * light_dist,
                light_intensity: [std::f64::consts::PI * light_dist * light_dist; 3],
                falloff_exponent: 0.0,
                fov_deg: 40.0,
                ambient: None,
            }
        })
        .collect()
}
