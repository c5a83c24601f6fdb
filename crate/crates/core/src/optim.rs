//! Classical multi-image baseline: fit maps to calibrated photographs by
//! minimizing the log-l1 re-rendering error plus a TV regularizer with
//! Adam, from a plausible initialization.
//!
//! Constraints are handled by reparameterization: albedos and roughness
//! live behind a sigmoid, the normal behind two unconstrained slope
//! channels, so every decoded iterate is a valid material.

use crate::error::{Error, Result};
use crate::image::{LdrImage, RadianceImage};
use crate::loss::{tv_loss, LossWeights};
use crate::material::{MapsGrad, ParamImage, SvbrdfMaps, R_MIN};
use crate::math::{logit, sigmoid, Vec3};
use crate::render::{plane_center, render, render_grad, SceneSample, DEFAULT_GAMMA};

/// Clamp applied before logit when encoding observed values.
const LOGIT_CLAMP: f64 = 1e-3;

/// Adam hyperparameters; defaults follow the training setup (lr 0.0002,
/// beta1 0.5) with standard beta2/eps.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 0.0002,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Unconstrained optimization variables with Adam moment accumulators.
#[derive(Clone, Debug)]
pub struct OptState {
    pub u: ParamImage,
    pub adam_m: ParamImage,
    pub adam_v: ParamImage,
    pub step_count: u64,
    pub hyper: AdamHyper,
}

impl OptState {
    pub fn new(u: ParamImage, hyper: AdamHyper) -> Self {
        let (w, h) = (u.width(), u.height());
        OptState {
            u,
            adam_m: ParamImage::zeros(w, h),
            adam_v: ParamImage::zeros(w, h),
            step_count: 0,
            hyper,
        }
    }
}

/// A photograph with exactly known capture conditions. The image is
/// gamma-encoded as stored; it is linearized before use.
#[derive(Clone, Debug)]
pub struct CalibratedInput {
    pub image: LdrImage,
    pub scene: SceneSample,
}

/// Decodes unconstrained parameters into a valid material:
/// albedos through a sigmoid, roughness onto [`R_MIN`, 1], the normal
/// as `normalize(sx, sy, 1)`.
pub fn decode_params(u: &ParamImage) -> SvbrdfMaps {
    let mut maps = SvbrdfMaps::constant(
        u.width(),
        u.height(),
        [0.0, 0.0, 1.0],
        [0.0; 3],
        [0.0; 3],
        R_MIN,
    );
    for i in 0..u.pixel_count() {
        let s = u.slope[i];
        maps.normal[i] = Vec3::new(s[0], s[1], 1.0).normalize().to_array();
        for c in 0..3 {
            maps.diffuse[i][c] = sigmoid(u.diffuse[i][c]);
            maps.specular[i][c] = sigmoid(u.specular[i][c]);
        }
        maps.roughness[i] = R_MIN + (1.0 - R_MIN) * sigmoid(u.roughness[i]);
    }
    maps
}

/// Inverse of [`decode_params`] up to the logit clamp; exact where the
/// maps stay strictly inside their ranges.
pub fn encode_params(maps: &SvbrdfMaps) -> ParamImage {
    let mut u = ParamImage::zeros(maps.width(), maps.height());
    let clamped_logit = |v: f64| logit(v.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP));
    for i in 0..maps.pixel_count() {
        u.slope[i] = maps.slopes_at(i);
        for c in 0..3 {
            u.diffuse[i][c] = clamped_logit(maps.diffuse[i][c]);
            u.specular[i][c] = clamped_logit(maps.specular[i][c]);
        }
        let t = (maps.roughness[i] - R_MIN) / (1.0 - R_MIN);
        u.roughness[i] = clamped_logit(t);
    }
    u
}

/// Chain rule from map-space gradients to parameter-space gradients at
/// the current `u` (slopes pass through; sigmoids contribute s(1-s)).
fn chain_decode(u: &ParamImage, maps_grad: &MapsGrad) -> ParamImage {
    let mut g = ParamImage::zeros(u.width(), u.height());
    for i in 0..u.pixel_count() {
        g.slope[i] = maps_grad.slope[i];
        for c in 0..3 {
            let s = sigmoid(u.diffuse[i][c]);
            g.diffuse[i][c] = maps_grad.diffuse[i][c] * s * (1.0 - s);
            let s = sigmoid(u.specular[i][c]);
            g.specular[i][c] = maps_grad.specular[i][c] * s * (1.0 - s);
        }
        let s = sigmoid(u.roughness[i]);
        g.roughness[i] = maps_grad.roughness[i] * (1.0 - R_MIN) * s * (1.0 - s);
    }
    g
}

/// Initialization from the inputs: diffuse from the most fronto-parallel
/// photograph (linearized), flat normal, roughness at the representable
/// floor, gray specular.
pub fn init_state(inputs: &[CalibratedInput], hyper: AdamHyper) -> Result<OptState> {
    let best = inputs
        .iter()
        .max_by(|a, b| {
            let za = view_z(&a.scene);
            let zb = view_z(&b.scene);
            za.partial_cmp(&zb).expect("finite view directions")
        })
        .ok_or(Error::EmptyInput("init_state needs at least one input"))?;
    let linear = best.image.to_linear(DEFAULT_GAMMA);
    let (w, h) = (linear.width(), linear.height());
    let mut u = ParamImage::zeros(w, h);
    for i in 0..w * h {
        let p = linear.pixels()[i];
        for c in 0..3 {
            u.diffuse[i][c] = logit(p[c].clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP));
            u.specular[i][c] = 0.0; // gray = 0.5
        }
        u.slope[i] = [0.0, 0.0];
        // "Roughness to zero", clamped to the representable floor.
        u.roughness[i] = logit(LOGIT_CLAMP);
    }
    Ok(OptState::new(u, hyper))
}

fn view_z(scene: &SceneSample) -> f64 {
    (scene.camera_pos - plane_center()).normalize().z
}

/// One bias-corrected Adam step in place. Rejects non-finite gradients,
/// naming the first offending channel index (see
/// [`ParamImage::channels`] for the order).
pub fn adam_step(state: &mut OptState, grad: &ParamImage) -> Result<()> {
    if !state.u.same_size(grad) {
        return Err(Error::DimensionMismatch(format!(
            "gradient {}x{} vs parameters {}x{}",
            grad.width(),
            grad.height(),
            state.u.width(),
            state.u.height()
        )));
    }
    if let Some(index) = grad.channels().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    let h = state.hyper;
    state.step_count += 1;
    let t = state.step_count as i32;
    let bias_m = 1.0 - h.beta1.powi(t);
    let bias_v = 1.0 - h.beta2.powi(t);
    let mut m_it = state.adam_m.channels_mut();
    let mut v_it = state.adam_v.channels_mut();
    for (u, g) in state.u.channels_mut().zip(grad.channels()) {
        let m = m_it.next().expect("moment buffers match u");
        let v = v_it.next().expect("moment buffers match u");
        *m = h.beta1 * *m + (1.0 - h.beta1) * g;
        *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
        let m_hat = *m / bias_m;
        let v_hat = *v / bias_v;
        *u -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
    }
    Ok(())
}

/// One row of the optimization trace.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: u64,
    pub objective: f64,
    pub render_term: f64,
    pub tv_term: f64,
}

#[derive(Clone, Debug)]
pub struct OptimizeConfig {
    pub weights: LossWeights,
    pub hyper: AdamHyper,
    pub iters: usize,
    /// Invoke the snapshot callback every this many steps (0 = never).
    pub snapshot_every: usize,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            weights: LossWeights::default(),
            hyper: AdamHyper::default(),
            iters: 5000,
            snapshot_every: 0,
        }
    }
}

/// Objective and its parameter gradient at `u`: mean log-l1 mismatch
/// against the linearized inputs under their own scenes, plus weighted TV.
pub fn objective(
    u: &ParamImage,
    inputs: &[CalibratedInput],
    linearized: &[RadianceImage],
    weights: &LossWeights,
) -> Result<(f64, f64, f64, ParamImage)> {
    let maps = decode_params(u);
    let eps = weights.log_eps;
    let count_per_input = (maps.pixel_count() * 3) as f64;
    let n_inputs = inputs.len() as f64;
    let mut render_term = 0.0;
    let mut maps_grad = MapsGrad::zeros(maps.width(), maps.height());
    for (input, observed) in inputs.iter().zip(linearized) {
        let rendered = render(&maps, &input.scene)?;
        let mut upstream = RadianceImage::new(maps.width(), maps.height());
        for (i, up) in upstream.pixels_mut().iter_mut().enumerate() {
            let r = rendered.pixels()[i];
            let o = observed.pixels()[i];
            for c in 0..3 {
                let diff = (r[c] + eps).ln() - (o[c] + eps).ln();
                render_term += diff.abs();
                let sign = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                up[c] = sign / ((r[c] + eps) * count_per_input * n_inputs);
            }
        }
        maps_grad.scaled_add(1.0, &render_grad(&maps, &input.scene, &upstream)?);
    }
    render_term /= count_per_input * n_inputs;

    let (tv_value, tv_grad) = tv_loss(&maps);
    maps_grad.scaled_add(weights.tv_weight, &tv_grad);
    let tv_term = weights.tv_weight * tv_value;

    let grad = chain_decode(u, &maps_grad);
    Ok((render_term + tv_term, render_term, tv_term, grad))
}

/// Runs the full fit. Deterministic: no randomness is involved, the loss
/// configurations are the calibrated input scenes themselves.
pub fn optimize(
    inputs: &[CalibratedInput],
    cfg: &OptimizeConfig,
    mut snapshot: impl FnMut(u64, &SvbrdfMaps),
) -> Result<(SvbrdfMaps, Vec<TraceRow>)> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput("optimize needs at least one input"));
    }
    if cfg.iters == 0 {
        return Err(Error::InvalidParameter("iters must be >= 1".into()));
    }
    let first = &inputs[0].image;
    for input in inputs {
        if input.image.width() != first.width() || input.image.height() != first.height() {
            return Err(Error::DimensionMismatch(
                "all calibrated inputs must share one resolution".into(),
            ));
        }
        input.scene.validate()?;
    }
    let linearized: Vec<RadianceImage> = inputs
        .iter()
        .map(|i| i.image.to_linear(DEFAULT_GAMMA))
        .collect();
    let mut state = init_state(inputs, cfg.hyper)?;
    optimize_from(&mut state, inputs, &linearized, cfg, &mut snapshot)
}

/// Same as [`optimize`] but starting from caller-provided state; used by
/// tests that initialize at the ground truth.
pub fn optimize_from(
    state: &mut OptState,
    inputs: &[CalibratedInput],
    linearized: &[RadianceImage],
    cfg: &OptimizeConfig,
    snapshot: &mut impl FnMut(u64, &SvbrdfMaps),
) -> Result<(SvbrdfMaps, Vec<TraceRow>)> {
    let mut trace = Vec::with_capacity(cfg.iters);
    for it in 0..cfg.iters {
        let (obj, render_term, tv_term, grad) =
            objective(&state.u, inputs, linearized, &cfg.weights)?;
        trace.push(TraceRow {
            iteration: it as u64,
            objective: obj,
            render_term,
            tv_term,
        });
        adam_step(state, &grad)?;
        if cfg.snapshot_every > 0 && (it + 1) % cfg.snapshot_every == 0 {
            snapshot(it as u64 + 1, &decode_params(&state.u));
        }
    }
    Ok((decode_params(&state.u), trace))
}
