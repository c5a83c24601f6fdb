//! Order-invariant multi-image fusion network.
//!
//! N weight-shared single-image tracks (U-Net encoder-decoder with
//! coordinate input channels and a fully-connected global track) produce
//! 64-channel feature maps; a per-pixel/per-channel max fuses them into
//! one fixed-size representation that a 3-layer joint decoder turns into
//! SVBRDF maps. Because all copies share weights and max is commutative,
//! the prediction is exactly invariant to input order and count.
//!
//! Checkpoint format (little-endian): magic `SVFN`, version u32, then
//! input_size/depth/base_channels/feature_channels/global_dim/
//! out_channels as u32, leaky_slope and slope_scale as f32, the
//! parameter count as u64, and the parameters as f32 in layout order.
//! The layout order is the segment order built in `Layout::build`:
//! encoder blocks shallow to deep (conv weight, conv bias, then instance
//! norm gamma/beta where present), the global track FCs, decoder blocks
//! deep to shallow, then the joint decoder (global FC, three convs with
//! their norms).

mod tensor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::RadianceImage;
use crate::loss::{sample_loss_configs, total_loss, LossWeights};
use crate::material::{MapsGrad, SvbrdfMaps, R_MIN};
use crate::math::{seed_stream, sigmoid};
use crate::optim::AdamHyper;
use crate::render::{invert_gamma, DEFAULT_GAMMA};
use crate::synth::Generator;
use tensor::*;

/// Input channels: linear RGB plus x, y coordinates in [-1, 1].
const IN_CHANNELS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub input_size: usize,
    /// Encoder levels; each halves the resolution.
    pub depth: usize,
    pub base_channels: usize,
    /// Pre-fusion feature channels; fixed at 64.
    pub feature_channels: usize,
    pub global_dim: usize,
    pub leaky_slope: f64,
    /// 9 output channels: 2 slopes + 3 diffuse + 1 roughness + 3 specular.
    pub out_channels: usize,
    /// Bound on representable normal slopes (tanh scale).
    pub slope_scale: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            input_size: 64,
            depth: 4,
            base_channels: 16,
            feature_channels: 64,
            global_dim: 32,
            leaky_slope: 0.2,
            out_channels: 9,
            slope_scale: 4.0,
        }
    }
}

impl NetConfig {
    /// Small configuration for tests and quick experiments.
    pub fn toy(input_size: usize, depth: usize, base_channels: usize, global_dim: usize) -> Self {
        NetConfig {
            input_size,
            depth,
            base_channels,
            global_dim,
            ..NetConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 || self.global_dim == 0 {
            return Err(Error::InvalidParameter("depth, base_channels, global_dim must be positive".into()));
        }
        if self.input_size % (1 << self.depth) != 0 || self.input_size == 0 {
            return Err(Error::InvalidParameter(format!(
                "input_size {} must be divisible by 2^depth = {}",
                self.input_size,
                1 << self.depth
            )));
        }
        if self.feature_channels != 64 {
            return Err(Error::InvalidParameter("feature_channels is fixed at 64".into()));
        }
        if self.out_channels != 9 {
            return Err(Error::InvalidParameter("out_channels is fixed at 9".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::InvalidParameter("leaky_slope must be in (0, 1)".into()));
        }
        if !(self.slope_scale > 0.0) {
            return Err(Error::InvalidParameter("slope_scale must be positive".into()));
        }
        Ok(())
    }

    /// Channel width of encoder level `l`; capped at 8x base.
    fn ch(&self, l: usize) -> usize {
        (self.base_channels << l).min(self.base_channels * 8)
    }

    fn bottleneck_channels(&self) -> usize {
        self.ch(self.depth - 1)
    }

    fn enc_in(&self, l: usize) -> usize {
        if l == 0 {
            IN_CHANNELS
        } else {
            self.ch(l - 1)
        }
    }

    fn dec_skip(&self, l: usize) -> usize {
        if l == 0 {
            IN_CHANNELS
        } else {
            self.ch(l - 1)
        }
    }

    fn dec_up(&self, l: usize) -> usize {
        if l == self.depth - 1 {
            self.bottleneck_channels()
        } else {
            self.ch(l)
        }
    }

    fn dec_out(&self, l: usize) -> usize {
        if l == 0 {
            self.feature_channels
        } else {
            self.ch(l - 1)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum SegInit {
    /// Uniform in +/- sqrt(1/fan_in).
    Uniform(usize),
    Zero,
    One,
}

#[derive(Clone, Debug)]
struct Segment {
    name: String,
    offset: usize,
    len: usize,
    init: SegInit,
}

#[derive(Clone, Debug)]
struct Layout {
    segments: Vec<Segment>,
    total: usize,
}

impl Layout {
    fn build(cfg: &NetConfig) -> Layout {
        let mut layout = Layout {
            segments: Vec::new(),
            total: 0,
        };
        let mut push = |name: String, len: usize, init: SegInit| {
            layout.segments.push(Segment {
                name,
                offset: layout.total,
                len,
                init,
            });
            layout.total += len;
        };
        let conv = |push: &mut dyn FnMut(String, usize, SegInit), name: &str, ic: usize, oc: usize, with_norm: bool| {
            push(format!("{name}.conv.w"), oc * ic * 9, SegInit::Uniform(ic * 9));
            push(format!("{name}.conv.b"), oc, SegInit::Zero);
            if with_norm {
                push(format!("{name}.norm.g"), oc, SegInit::One);
                push(format!("{name}.norm.b"), oc, SegInit::Zero);
            }
        };
        for l in 0..cfg.depth {
            conv(&mut push, &format!("enc{l}"), cfg.enc_in(l), cfg.ch(l), l > 0);
        }
        let cb = cfg.bottleneck_channels();
        push("global.fc1.w".into(), cfg.global_dim * cb, SegInit::Uniform(cb));
        push("global.fc1.b".into(), cfg.global_dim, SegInit::Zero);
        push("global.fc2.w".into(), cb * cfg.global_dim, SegInit::Uniform(cfg.global_dim));
        push("global.fc2.b".into(), cb, SegInit::Zero);
        for l in (0..cfg.depth).rev() {
            conv(
                &mut push,
                &format!("dec{l}"),
                cfg.dec_up(l) + cfg.dec_skip(l),
                cfg.dec_out(l),
                l > 0,
            );
        }
        let f = cfg.feature_channels;
        push("joint.fcg.w".into(), f * cfg.global_dim, SegInit::Uniform(cfg.global_dim));
        push("joint.fcg.b".into(), f, SegInit::Zero);
        conv(&mut push, "joint.c1", f, f, true);
        conv(&mut push, "joint.c2", f, f, true);
        conv(&mut push, "joint.c3", f, cfg.out_channels, false);
        layout
    }

    fn get(&self, name: &str) -> &Segment {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .unwrap_or_else(|| panic!("unknown parameter segment {name}"))
    }
}

/// Weights and topology of the fusion network. One weight set serves any
/// number of input images.
#[derive(Clone, Debug)]
pub struct FusionNet {
    pub config: NetConfig,
    params: Vec<f64>,
    layout: Layout,
}

struct ConvBlockCache {
    input: Tensor,
    norm: Option<InCache>,
    /// Pre-activation values, kept only for norm-free blocks; normed
    /// blocks recover the activation sign from gamma * xhat + beta.
    pre_act: Option<Tensor>,
}

struct TrackCache {
    input: Tensor,
    enc: Vec<ConvBlockCache>,
    enc_out: Vec<Tensor>,
    g0: Vec<f64>,
    fc1_pre: Vec<f64>,
    global: Vec<f64>,
    /// Decoder block caches indexed by level.
    dec: Vec<ConvBlockCache>,
}

struct JointCache {
    g_fused: Vec<f64>,
    b1: ConvBlockCache,
    b2: ConvBlockCache,
    conv3_input: Tensor,
    pre_head: Tensor,
}

/// Everything needed to run the reverse pass.
pub struct ForwardCache {
    tracks: Vec<TrackCache>,
    feat_argmax: Vec<u32>,
    glob_argmax: Vec<u32>,
    joint: JointCache,
}

impl FusionNet {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::build(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.total];
        for seg in &layout.segments {
            match seg.init {
                SegInit::Uniform(fan_in) => {
                    let bound = (1.0 / fan_in as f64).sqrt();
                    for v in &mut params[seg.offset..seg.offset + seg.len] {
                        *v = (rng.gen::<f64>() * 2.0 - 1.0) * bound;
                    }
                }
                SegInit::Zero => {}
                SegInit::One => {
                    for v in &mut params[seg.offset..seg.offset + seg.len] {
                        *v = 1.0;
                    }
                }
            }
        }
        Ok(FusionNet { config, params, layout })
    }

    /// All-zero weights (including norm gains); useful for tests.
    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::build(&config);
        Ok(FusionNet {
            config,
            params: vec![0.0; layout.total],
            layout,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn seg(&self, name: &str) -> &[f64] {
        let s = self.layout.get(name);
        &self.params[s.offset..s.offset + s.len]
    }

    fn coord_input(&self, image: &RadianceImage) -> Tensor {
        let s = self.config.input_size;
        let mut t = Tensor::zeros(IN_CHANNELS, s, s);
        for y in 0..s {
            for x in 0..s {
                let p = image.pixel(x, y);
                for c in 0..3 {
                    *t.at_mut(c, y, x) = p[c];
                }
                *t.at_mut(3, y, x) = 2.0 * (x as f64 + 0.5) / s as f64 - 1.0;
                *t.at_mut(4, y, x) = 2.0 * (y as f64 + 0.5) / s as f64 - 1.0;
            }
        }
        t
    }

    fn conv_block(
        &self,
        name: &str,
        input: Tensor,
        oc: usize,
        stride: usize,
        with_norm: bool,
    ) -> (Tensor, ConvBlockCache) {
        let conv_out = conv2d(
            &input,
            self.seg(&format!("{name}.conv.w")),
            self.seg(&format!("{name}.conv.b")),
            oc,
            3,
            stride,
            1,
        );
        let (mut out, norm, pre_act) = if with_norm {
            let (y, cache) = instance_norm(
                &conv_out,
                self.seg(&format!("{name}.norm.g")),
                self.seg(&format!("{name}.norm.b")),
            );
            (y, Some(cache), None)
        } else {
            (conv_out.clone(), None, Some(conv_out))
        };
        leaky_relu(&mut out, self.config.leaky_slope);
        (
            out,
            ConvBlockCache {
                input,
                norm,
                pre_act,
            },
        )
    }

    /// Leaky-ReLU backward for a conv block, reconstructing the
    /// activation sign from whichever cache the block kept.
    fn block_act_backward(&self, name: &str, cache: &ConvBlockCache, grad_out: &Tensor) -> Tensor {
        if let Some(pre) = &cache.pre_act {
            return leaky_relu_backward(pre, grad_out, self.config.leaky_slope);
        }
        let norm = cache.norm.as_ref().expect("block has norm or pre_act");
        let gamma = self.seg(&format!("{name}.norm.g"));
        let beta = self.seg(&format!("{name}.norm.b"));
        let x = &norm.xhat;
        let mut g = grad_out.clone();
        for c in 0..x.c {
            let base = c * x.h * x.w;
            for i in 0..x.h * x.w {
                if gamma[c] * x.data[base + i] + beta[c] < 0.0 {
                    g.data[base + i] *= self.config.leaky_slope;
                }
            }
        }
        g
    }

    fn conv_block_backward(
        &self,
        name: &str,
        cache: &ConvBlockCache,
        oc: usize,
        stride: usize,
        grad_out: &Tensor,
        grads: &mut [f64],
    ) -> Tensor {
        let d_pre = self.block_act_backward(name, cache, grad_out);
        let d_conv = if let Some(norm) = &cache.norm {
            let (d_conv, d_gamma, d_beta) =
                instance_norm_backward(norm, self.seg(&format!("{name}.norm.g")), &d_pre);
            accumulate(grads, self.layout.get(&format!("{name}.norm.g")), &d_gamma);
            accumulate(grads, self.layout.get(&format!("{name}.norm.b")), &d_beta);
            d_conv
        } else {
            d_pre
        };
        let (d_input, d_w, d_b) = conv2d_backward(
            &cache.input,
            self.seg(&format!("{name}.conv.w")),
            &d_conv,
            oc,
            3,
            stride,
            1,
        );
        accumulate(grads, self.layout.get(&format!("{name}.conv.w")), &d_w);
        accumulate(grads, self.layout.get(&format!("{name}.conv.b")), &d_b);
        d_input
    }

    /// Runs one weight-shared track: returns the 64-channel pre-fusion
    /// feature map and the global feature vector.
    fn track_forward(&self, image: &RadianceImage) -> (Tensor, Vec<f64>, TrackCache) {
        let cfg = &self.config;
        let input = self.coord_input(image);
        let mut enc = Vec::with_capacity(cfg.depth);
        let mut enc_out = Vec::with_capacity(cfg.depth);
        let mut x = input.clone();
        for l in 0..cfg.depth {
            let (out, cache) = self.conv_block(&format!("enc{l}"), x, cfg.ch(l), 2, l > 0);
            enc.push(cache);
            enc_out.push(out.clone());
            x = out;
        }
        let bottleneck = enc_out[cfg.depth - 1].clone();
        let g0 = spatial_mean(&bottleneck);
        let fc1_pre = fc(&g0, self.seg("global.fc1.w"), self.seg("global.fc1.b"), cfg.global_dim);
        let mut global = fc1_pre.clone();
        leaky_relu_vec(&mut global, cfg.leaky_slope);
        let inj = fc(
            &global,
            self.seg("global.fc2.w"),
            self.seg("global.fc2.b"),
            cfg.bottleneck_channels(),
        );
        let mut y = broadcast_add(&bottleneck, &inj);

        let mut dec: Vec<Option<ConvBlockCache>> = (0..cfg.depth).map(|_| None).collect();
        for l in (0..cfg.depth).rev() {
            let up = upsample2(&y);
            let skip = if l == 0 { &input } else { &enc_out[l - 1] };
            let cat = concat_channels(&up, skip);
            let (out, cache) = self.conv_block(&format!("dec{l}"), cat, cfg.dec_out(l), 1, l > 0);
            dec[l] = Some(cache);
            y = out;
        }
        let features = y;
        let cache = TrackCache {
            input,
            enc,
            enc_out,
            g0,
            fc1_pre,
            global: global.clone(),
            dec: dec.into_iter().map(|c| c.expect("all levels populated")).collect(),
        };
        (features, global, cache)
    }

    fn track_backward(
        &self,
        cache: &TrackCache,
        d_features: &Tensor,
        d_global_in: &[f64],
        grads: &mut [f64],
    ) {
        let cfg = &self.config;
        // Decoder, shallow to deep.
        let mut d_enc_out: Vec<Tensor> = cache
            .enc_out
            .iter()
            .map(|t| Tensor::zeros(t.c, t.h, t.w))
            .collect();
        let mut d_y = d_features.clone();
        for l in 0..cfg.depth {
            let block = &cache.dec[l];
            let d_cat = self.conv_block_backward(&format!("dec{l}"), block, cfg.dec_out(l), 1, &d_y, grads);
            let (d_up, d_skip) = split_channels(&d_cat, cfg.dec_up(l));
            if l > 0 {
                add_into(&mut d_enc_out[l - 1], &d_skip);
            }
            d_y = upsample2_backward(&d_up);
        }
        // d_y is now the gradient on bottleneck + broadcast(fc2(global)).
        let d_inj = broadcast_add_backward(&d_y);
        let (d_global_fc2, d_w2, d_b2) = fc_backward(&cache.global, self.seg("global.fc2.w"), &d_inj);
        accumulate(grads, self.layout.get("global.fc2.w"), &d_w2);
        accumulate(grads, self.layout.get("global.fc2.b"), &d_b2);
        let d_global: Vec<f64> = d_global_in
            .iter()
            .zip(&d_global_fc2)
            .map(|(a, b)| a + b)
            .collect();
        let d_fc1_out = leaky_relu_vec_backward(&cache.fc1_pre, &d_global, cfg.leaky_slope);
        let (d_g0, d_w1, d_b1) = fc_backward(&cache.g0, self.seg("global.fc1.w"), &d_fc1_out);
        accumulate(grads, self.layout.get("global.fc1.w"), &d_w1);
        accumulate(grads, self.layout.get("global.fc1.b"), &d_b1);
        let bott = &cache.enc_out[cfg.depth - 1];
        add_into(&mut d_enc_out[cfg.depth - 1], &d_y);
        add_into(
            &mut d_enc_out[cfg.depth - 1],
            &spatial_mean_backward(&d_g0, bott.c, bott.h, bott.w),
        );
        // Encoder, deep to shallow.
        for l in (0..cfg.depth).rev() {
            let d_out = d_enc_out[l].clone();
            let d_in = self.conv_block_backward(&format!("enc{l}"), &cache.enc[l], cfg.ch(l), 2, &d_out, grads);
            if l > 0 {
                add_into(&mut d_enc_out[l - 1], &d_in);
            }
            // l == 0: gradient w.r.t. the image is not needed.
        }
    }

    fn joint_forward(&self, fused: Tensor, g_fused: Vec<f64>) -> (SvbrdfMaps, JointCache) {
        let cfg = &self.config;
        let inj = fc(
            &g_fused,
            self.seg("joint.fcg.w"),
            self.seg("joint.fcg.b"),
            cfg.feature_channels,
        );
        let z0 = broadcast_add(&fused, &inj);
        let (a1, b1) = self.conv_block("joint.c1", z0, cfg.feature_channels, 1, true);
        let (a2, b2) = self.conv_block("joint.c2", a1, cfg.feature_channels, 1, true);
        let pre_head = conv2d(
            &a2,
            self.seg("joint.c3.conv.w"),
            self.seg("joint.c3.conv.b"),
            cfg.out_channels,
            3,
            1,
            1,
        );
        let maps = self.decode_heads(&pre_head);
        (
            maps,
            JointCache {
                g_fused,
                b1,
                b2,
                conv3_input: a2,
                pre_head,
            },
        )
    }

    /// Output activations: slopes via tanh * slope_scale, albedos via
    /// sigmoid, roughness onto [R_MIN, 1]. Channel order: 2 slopes,
    /// 3 diffuse, 1 roughness, 3 specular.
    fn decode_heads(&self, z: &Tensor) -> SvbrdfMaps {
        let s = self.config.input_size;
        let smax = self.config.slope_scale;
        SvbrdfMaps::from_fn(s, s, |x, y| {
            let sx = smax * z.at(0, y, x).tanh();
            let sy = smax * z.at(1, y, x).tanh();
            let len = (sx * sx + sy * sy + 1.0).sqrt();
            let normal = [sx / len, sy / len, 1.0 / len];
            let diffuse = [
                sigmoid(z.at(2, y, x)),
                sigmoid(z.at(3, y, x)),
                sigmoid(z.at(4, y, x)),
            ];
            let rough = R_MIN + (1.0 - R_MIN) * sigmoid(z.at(5, y, x));
            let specular = [
                sigmoid(z.at(6, y, x)),
                sigmoid(z.at(7, y, x)),
                sigmoid(z.at(8, y, x)),
            ];
            (normal, diffuse, specular, rough)
        })
    }

    fn check_inputs(&self, images: &[RadianceImage]) -> Result<()> {
        if images.is_empty() {
            return Err(Error::EmptyInput("forward needs at least one image"));
        }
        let s = self.config.input_size;
        for img in images {
            if img.width() != s || img.height() != s {
                return Err(Error::DimensionMismatch(format!(
                    "input {}x{} does not match network input size {}",
                    img.width(),
                    img.height(),
                    s
                )));
            }
        }
        Ok(())
    }

    /// Full prediction from 1..n linearized images.
    pub fn forward(&self, images: &[RadianceImage]) -> Result<SvbrdfMaps> {
        Ok(self.forward_cached(images)?.0)
    }

    pub fn forward_cached(&self, images: &[RadianceImage]) -> Result<(SvbrdfMaps, ForwardCache)> {
        self.check_inputs(images)?;
        let mut tracks = Vec::with_capacity(images.len());
        let mut features = Vec::with_capacity(images.len());
        let mut globals = Vec::with_capacity(images.len());
        for img in images {
            let (f, g, cache) = self.track_forward(img);
            features.push(f);
            globals.push(g);
            tracks.push(cache);
        }
        let (fused, feat_argmax) = max_fuse(&features.iter().collect::<Vec<_>>());
        let (g_fused, glob_argmax) = max_fuse_vec(&globals);
        let (maps, joint) = self.joint_forward(fused, g_fused);
        Ok((
            maps,
            ForwardCache {
                tracks,
                feat_argmax,
                glob_argmax,
                joint,
            },
        ))
    }

    /// Reverse pass: contracts an upstream gradient on the output maps
    /// (slope-space normals) into gradients for every weight, flat in
    /// layout order. Max fusion routes to the argmax contributor.
    pub fn backward(&self, cache: &ForwardCache, upstream: &MapsGrad) -> Vec<f64> {
        let cfg = &self.config;
        let s = cfg.input_size;
        let mut grads = vec![0.0; self.params.len()];

        // Head activations.
        let z = &cache.joint.pre_head;
        let mut d_z = Tensor::zeros(cfg.out_channels, s, s);
        for y in 0..s {
            for x in 0..s {
                let i = y * s + x;
                for j in 0..2 {
                    let t = z.at(j, y, x).tanh();
                    *d_z.at_mut(j, y, x) = upstream.slope[i][j] * cfg.slope_scale * (1.0 - t * t);
                }
                for c in 0..3 {
                    let sd = sigmoid(z.at(2 + c, y, x));
                    *d_z.at_mut(2 + c, y, x) = upstream.diffuse[i][c] * sd * (1.0 - sd);
                    let ss = sigmoid(z.at(6 + c, y, x));
                    *d_z.at_mut(6 + c, y, x) = upstream.specular[i][c] * ss * (1.0 - ss);
                }
                let sr = sigmoid(z.at(5, y, x));
                *d_z.at_mut(5, y, x) = upstream.roughness[i] * (1.0 - R_MIN) * sr * (1.0 - sr);
            }
        }

        // Joint decoder.
        let (d_a2, d_w3, d_b3) = conv2d_backward(
            &cache.joint.conv3_input,
            self.seg("joint.c3.conv.w"),
            &d_z,
            cfg.out_channels,
            3,
            1,
            1,
        );
        accumulate(&mut grads, self.layout.get("joint.c3.conv.w"), &d_w3);
        accumulate(&mut grads, self.layout.get("joint.c3.conv.b"), &d_b3);
        let d_a1 = self.conv_block_backward("joint.c2", &cache.joint.b2, cfg.feature_channels, 1, &d_a2, &mut grads);
        let d_z0 = self.conv_block_backward("joint.c1", &cache.joint.b1, cfg.feature_channels, 1, &d_a1, &mut grads);
        let d_inj = broadcast_add_backward(&d_z0);
        let (d_g_fused, d_wg, d_bg) = fc_backward(&cache.joint.g_fused, self.seg("joint.fcg.w"), &d_inj);
        accumulate(&mut grads, self.layout.get("joint.fcg.w"), &d_wg);
        accumulate(&mut grads, self.layout.get("joint.fcg.b"), &d_bg);

        // Route through the max fusion.
        let n = cache.tracks.len();
        let feat_dims = (cfg.feature_channels, s, s);
        let mut d_feats: Vec<Tensor> = (0..n)
            .map(|_| Tensor::zeros(feat_dims.0, feat_dims.1, feat_dims.2))
            .collect();
        for (el, &who) in cache.feat_argmax.iter().enumerate() {
            d_feats[who as usize].data[el] = d_z0.data[el];
        }
        let mut d_globs: Vec<Vec<f64>> = vec![vec![0.0; cfg.global_dim]; n];
        for (el, &who) in cache.glob_argmax.iter().enumerate() {
            d_globs[who as usize][el] = d_g_fused[el];
        }

        // Weight-shared tracks: gradients sum over inputs.
        for (track, (d_f, d_g)) in cache.tracks.iter().zip(d_feats.iter().zip(&d_globs)) {
            self.track_backward(track, d_f, d_g, &mut grads);
        }
        grads
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(b"SVFN")?;
        w.write_all(&1u32.to_le_bytes())?;
        let c = &self.config;
        for v in [
            c.input_size as u32,
            c.depth as u32,
            c.base_channels as u32,
            c.feature_channels as u32,
            c.global_dim as u32,
            c.out_channels as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(c.leaky_slope as f32).to_le_bytes())?;
        w.write_all(&(c.slope_scale as f32).to_le_bytes())?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&(*p as f32).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: path.display().to_string(),
            reason: reason.into(),
        };
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"SVFN" {
            return Err(bad("bad magic"));
        }
        let mut u32buf = [0u8; 4];
        let mut read_u32 = |r: &mut dyn Read| -> Result<u32> {
            r.read_exact(&mut u32buf)?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let version = read_u32(&mut r)?;
        if version != 1 {
            return Err(bad("unsupported version"));
        }
        let input_size = read_u32(&mut r)? as usize;
        let depth = read_u32(&mut r)? as usize;
        let base_channels = read_u32(&mut r)? as usize;
        let feature_channels = read_u32(&mut r)? as usize;
        let global_dim = read_u32(&mut r)? as usize;
        let out_channels = read_u32(&mut r)? as usize;
        let mut f32buf = [0u8; 4];
        r.read_exact(&mut f32buf)?;
        let leaky_slope = f32::from_le_bytes(f32buf) as f64;
        r.read_exact(&mut f32buf)?;
        let slope_scale = f32::from_le_bytes(f32buf) as f64;
        let config = NetConfig {
            input_size,
            depth,
            base_channels,
            feature_channels,
            global_dim,
            leaky_slope,
            out_channels,
            slope_scale,
        };
        config.validate().map_err(|e| Error::Format {
            path: path.display().to_string(),
            reason: format!("invalid stored config: {e}"),
        })?;
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let count = u64::from_le_bytes(u64buf) as usize;
        let layout = Layout::build(&config);
        if count != layout.total {
            return Err(bad(&format!(
                "parameter count {} does not match layout {}",
                count, layout.total
            )));
        }
        let mut params = vec![0.0f64; count];
        for p in &mut params {
            r.read_exact(&mut f32buf)?;
            *p = f32::from_le_bytes(f32buf) as f64;
        }
        Ok(FusionNet { config, params, layout })
    }
}

fn accumulate(grads: &mut [f64], seg: &Segment, values: &[f64]) {
    debug_assert_eq!(seg.len, values.len());
    for (g, v) in grads[seg.offset..seg.offset + seg.len].iter_mut().zip(values) {
        *g += v;
    }
}

fn add_into(dst: &mut Tensor, src: &Tensor) {
    debug_assert_eq!(dst.data.len(), src.data.len());
    for (d, s) in dst.data.iter_mut().zip(&src.data) {
        *d += s;
    }
}

/// Training trace: mean batch loss per iteration.
pub type TrainTrace = Vec<f64>;

/// Small-scale end-to-end training: Adam (lr 0.0002, beta1 0.5) on the
/// total loss of forward predictions against freshly generated samples,
/// batch size 2, input count per sample drawn by the generator.
pub fn toy_train(
    net: &mut FusionNet,
    gen: &Generator,
    weights: &LossWeights,
    iters: usize,
    seed: u64,
) -> Result<TrainTrace> {
    const BATCH: usize = 2;
    if gen.config().crop_size != net.config.input_size {
        return Err(Error::DimensionMismatch(format!(
            "generator crop {} does not match network input {}",
            gen.config().crop_size,
            net.config.input_size
        )));
    }
    let hyper = AdamHyper::default();
    let mut m = vec![0.0; net.param_count()];
    let mut v = vec![0.0; net.param_count()];
    let mut trace = Vec::with_capacity(iters);
    for it in 0..iters {
        let mut grads = vec![0.0; net.param_count()];
        let mut batch_loss = 0.0;
        for b in 0..BATCH {
            let index = (it * BATCH + b) as u64;
            let sample = gen.generate(index)?;
            let linear: Vec<RadianceImage> = sample
                .inputs
                .iter()
                .map(|(img, _)| invert_gamma(img, DEFAULT_GAMMA))
                .collect();
            let (pred, cache) = net.forward_cached(&linear)?;
            let mut cfg_rng = ChaCha8Rng::seed_from_u64(seed_stream(seed, index));
            let configs = sample_loss_configs(weights.n_render_configs, &mut cfg_rng);
            let (loss, maps_grad) = total_loss(&pred, &sample.gt, &configs, weights)?;
            batch_loss += loss;
            let wg = net.backward(&cache, &maps_grad);
            for (g, w) in grads.iter_mut().zip(&wg) {
                *g += w / BATCH as f64;
            }
        }
        trace.push(batch_loss / BATCH as f64);
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index });
        }
        let t = (it + 1) as i32;
        let bias_m = 1.0 - hyper.beta1.powi(t);
        let bias_v = 1.0 - hyper.beta2.powi(t);
        for ((p, g), (mi, vi)) in net
            .params_mut()
            .iter_mut()
            .zip(&grads)
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = hyper.beta1 * *mi + (1.0 - hyper.beta1) * g;
            *vi = hyper.beta2 * *vi + (1.0 - hyper.beta2) * g * g;
            *p -= hyper.lr * (*mi / bias_m) / ((*vi / bias_v).sqrt() + hyper.eps);
        }
    }
    Ok(trace)
}
