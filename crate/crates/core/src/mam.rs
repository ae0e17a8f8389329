//! Motion-aware module: attention masks inferred from temporal differences
//! of channel-reduced frame features, applied multiplicatively to the full
//! features.
//!
//! Data layout is `(N, T, C, H, W)` throughout. Motion is
//! `M_t = V_{t+1} - V_t` with the final slot zero-padded, so every mask
//! lines up with all `T` frames.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Padding, Var};
use crate::error::{Error, Result};
use crate::param_struct;
use crate::rng::{derive_str, SeedRng};
use crate::tensor::{Real, Tensor};

/// Arrangement of the spatial and channel masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttentionVariant {
    /// Spatial, then channel.
    #[serde(rename = "SCA")]
    Sca,
    /// Channel, then spatial.
    #[serde(rename = "CSA")]
    Csa,
    /// Parallel: summed logits through one sigmoid.
    #[serde(rename = "C//S")]
    CparS,
    #[serde(rename = "SPA_only")]
    SpaOnly,
    #[serde(rename = "CHA_only")]
    ChaOnly,
    #[serde(rename = "none")]
    None,
}

impl AttentionVariant {
    pub const ALL: [AttentionVariant; 6] = [
        AttentionVariant::Sca,
        AttentionVariant::Csa,
        AttentionVariant::CparS,
        AttentionVariant::SpaOnly,
        AttentionVariant::ChaOnly,
        AttentionVariant::None,
    ];

    /// Number of sigmoid masks multiplied onto the features.
    pub fn mask_count(self) -> i32 {
        match self {
            AttentionVariant::Sca | AttentionVariant::Csa => 2,
            AttentionVariant::CparS | AttentionVariant::SpaOnly | AttentionVariant::ChaOnly => 1,
            AttentionVariant::None => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AttentionVariant::Sca => "SCA",
            AttentionVariant::Csa => "CSA",
            AttentionVariant::CparS => "C//S",
            AttentionVariant::SpaOnly => "SPA_only",
            AttentionVariant::ChaOnly => "CHA_only",
            AttentionVariant::None => "none",
        }
    }
}

impl fmt::Display for AttentionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttentionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "SCA" | "sca" => AttentionVariant::Sca,
            "CSA" | "csa" => AttentionVariant::Csa,
            "C//S" | "CparS" | "cpars" | "c//s" => AttentionVariant::CparS,
            "SPA_only" | "spa_only" => AttentionVariant::SpaOnly,
            "CHA_only" | "cha_only" => AttentionVariant::ChaOnly,
            "none" | "None" => AttentionVariant::None,
            other => {
                return Err(Error::Config(format!("unknown attention variant `{other}`")))
            }
        })
    }
}

/// Where the second mask of a sequential arrangement gets its descriptor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MaskSource {
    /// From the motion field modulated by the first mask.
    #[default]
    Modulated,
    /// Both masks from the raw motion field (diagnostic).
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MamConfig {
    pub channels: usize,
    pub reduction: usize,
    pub bottleneck_reduction: usize,
    pub spa_hidden: usize,
    pub spa_kernel: usize,
}

impl Default for MamConfig {
    fn default() -> Self {
        MamConfig {
            channels: 16,
            reduction: 4,
            bottleneck_reduction: 4,
            spa_hidden: 8,
            spa_kernel: 3,
        }
    }
}

impl MamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reduction == 0 || !self.channels.is_multiple_of(self.reduction) {
            return Err(Error::Config(format!(
                "channels {} not divisible by reduction ratio {}",
                self.channels, self.reduction
            )));
        }
        if self.bottleneck_reduction == 0 || self.spa_hidden == 0 {
            return Err(Error::Config("bottleneck ratio and spatial hidden width must be positive".into()));
        }
        if self.spa_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("spatial kernel {} must be odd", self.spa_kernel)));
        }
        Ok(())
    }

    pub fn reduced(&self) -> usize {
        self.channels / self.reduction
    }

    /// Width of the channel-gate bottleneck, never below one.
    pub fn bottleneck(&self) -> usize {
        (self.reduced() / self.bottleneck_reduction).max(1)
    }
}

param_struct! {
    /// Learnable weights of the motion-aware module. Linear weights are stored
    /// `[in, out]`; conv kernels `[out, in, kh, kw]`.
    pub struct MamParams {
        reduce_w,
        spa_w1,
        spa_b1,
        spa_w2,
        spa_b2,
        cha_w0,
        cha_b0,
        cha_w1,
        cha_b1,
        /// 1×1 expansion used only by the parallel arrangement.
        expand_w,
        expand_b,
    }
}

impl<F: Real> MamParams<Tensor<F>> {
    pub fn init(cfg: &MamConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (c, cr, b, hid, k) = (
            cfg.channels,
            cfg.reduced(),
            cfg.bottleneck(),
            cfg.spa_hidden,
            cfg.spa_kernel,
        );
        let w = |name: &str, shape: &[usize], fan_in: usize, fan_out: usize| {
            SeedRng::new(derive_str(seed, name)).glorot::<F>(shape, fan_in, fan_out)
        };
        Ok(MamParams {
            reduce_w: w("mam.reduce_w", &[cr, c, 1, 1], c, cr),
            spa_w1: w("mam.spa_w1", &[hid, 1, k, k], k * k, hid * k * k),
            spa_b1: Tensor::zeros(&[hid]),
            spa_w2: w("mam.spa_w2", &[1, hid, k, k], hid * k * k, k * k),
            spa_b2: Tensor::zeros(&[1]),
            cha_w0: w("mam.cha_w0", &[cr, b], cr, b),
            cha_b0: Tensor::zeros(&[b]),
            cha_w1: w("mam.cha_w1", &[b, cr], b, cr),
            cha_b1: Tensor::zeros(&[cr]),
            expand_w: w("mam.expand_w", &[c, cr, 1, 1], cr, c),
            expand_b: Tensor::zeros(&[c]),
        })
    }
}

/// Result of one pass through the module.
#[derive(Clone, Debug)]
pub struct MamOutput {
    /// Re-weighted features, `(N, T, C, H, W)`.
    pub features: Var,
    /// Temporal-difference field of the reduced features, `(N, T, C', H, W)`.
    pub motion: Option<Var>,
    /// The spatial mask the arrangement used, `(N, T, 1, H, W)`.
    pub spatial_mask: Option<Var>,
    /// The channel gates the arrangement used, `(N, T, C', 1, 1)`.
    pub channel_mask: Option<Var>,
}

fn dims5<F: Real>(g: &Graph<F>, v: Var) -> Result<[usize; 5]> {
    let s = g.shape(v);
    if s.len() != 5 {
        return Err(Error::Contract(format!("expected (N,T,C,H,W) features, got {s:?}")));
    }
    Ok([s[0], s[1], s[2], s[3], s[4]])
}

/// Per-frame 1×1 convolution from `C` to `C / r` channels.
pub fn channel_reduce<F: Real>(g: &mut Graph<F>, v: Var, p: &MamParams<Var>) -> Result<Var> {
    let [n, t, c, h, w] = dims5(g, v)?;
    let kshape = g.shape(p.reduce_w).to_vec();
    if kshape[1] != c {
        return Err(Error::shape("channel_reduce", g.shape(v), &kshape));
    }
    if c % kshape[0] != 0 {
        return Err(Error::Config(format!(
            "{c} channels not divisible into {} reduced channels",
            kshape[0]
        )));
    }
    let flat = g.reshape(v, &[n * t, c, h, w])?;
    let y = g.conv2d(flat, p.reduce_w, None, 1, Padding::Valid)?;
    g.reshape(y, &[n, t, kshape[0], h, w])
}

/// `M_t = V_{t+1} - V_t`, last slot zero.
pub fn temporal_difference<F: Real>(g: &mut Graph<F>, vr: Var) -> Result<Var> {
    dims5(g, vr)?;
    g.temporal_diff(vr)
}

/// Pre-sigmoid spatial logits `(N, T, 1, H, W)` from the channel-mean descriptor.
pub fn spatial_logits<F: Real>(g: &mut Graph<F>, m: Var, p: &MamParams<Var>) -> Result<Var> {
    let [n, t, _, h, w] = dims5(g, m)?;
    let desc = g.reduce_mean(m, &[2])?;
    let x = g.reshape(desc, &[n * t, 1, h, w])?;
    let hid = g.conv2d(x, p.spa_w1, Some(p.spa_b1), 1, Padding::Same)?;
    let hid = g.relu(hid);
    let out = g.conv2d(hid, p.spa_w2, Some(p.spa_b2), 1, Padding::Same)?;
    g.reshape(out, &[n, t, 1, h, w])
}

pub fn spatial_mask<F: Real>(g: &mut Graph<F>, m: Var, p: &MamParams<Var>) -> Result<Var> {
    let logits = spatial_logits(g, m, p)?;
    Ok(g.sigmoid(logits))
}

/// Pre-sigmoid channel logits `(N, T, C', 1, 1)`: spatial mean, bottleneck
/// FC, relu, expansion FC.
pub fn channel_logits<F: Real>(g: &mut Graph<F>, m: Var, p: &MamParams<Var>) -> Result<Var> {
    let [n, t, c, _, _] = dims5(g, m)?;
    let z = g.reduce_mean(m, &[3, 4])?;
    let hid = g.linear(z, p.cha_w0, Some(p.cha_b0))?;
    let hid = g.relu(hid);
    let out = g.linear(hid, p.cha_w1, Some(p.cha_b1))?;
    g.reshape(out, &[n, t, c, 1, 1])
}

pub fn channel_mask<F: Real>(g: &mut Graph<F>, m: Var, p: &MamParams<Var>) -> Result<Var> {
    let logits = channel_logits(g, m, p)?;
    Ok(g.sigmoid(logits))
}

/// Repeats each reduced-channel gate over its group of `r` full channels.
fn expand_gates<F: Real>(g: &mut Graph<F>, gates: Var, channels: usize) -> Result<Var> {
    let reduced = g.shape(gates)[2];
    g.repeat_interleave(gates, 2, channels / reduced)
}

pub fn apply_mam<F: Real>(
    g: &mut Graph<F>,
    v: Var,
    variant: AttentionVariant,
    p: &MamParams<Var>,
) -> Result<MamOutput> {
    apply_mam_with(g, v, variant, p, MaskSource::Modulated)
}

pub fn apply_mam_with<F: Real>(
    g: &mut Graph<F>,
    v: Var,
    variant: AttentionVariant,
    p: &MamParams<Var>,
    source: MaskSource,
) -> Result<MamOutput> {
    let [n, t, c, h, w] = dims5(g, v)?;
    if t < 2 {
        return Err(Error::Contract(format!("clip needs at least two frames, got {t}")));
    }
    if variant == AttentionVariant::None {
        return Ok(MamOutput {
            features: v,
            motion: None,
            spatial_mask: None,
            channel_mask: None,
        });
    }
    let reduced = channel_reduce(g, v, p)?;
    let m = temporal_difference(g, reduced)?;
    let cr = g.shape(m)[2];
    let out = |features, spatial_mask, channel_mask| MamOutput {
        features,
        motion: Some(m),
        spatial_mask,
        channel_mask,
    };
    match variant {
        AttentionVariant::None => unreachable!(),
        AttentionVariant::SpaOnly => {
            let ws = spatial_mask(g, m, p)?;
            let y = g.mul_bcast(ws, v)?;
            Ok(out(y, Some(ws), None))
        }
        AttentionVariant::ChaOnly => {
            let wc = channel_mask(g, m, p)?;
            let full = expand_gates(g, wc, c)?;
            let y = g.mul_bcast(full, v)?;
            Ok(out(y, None, Some(wc)))
        }
        AttentionVariant::Sca => {
            let ws = spatial_mask(g, m, p)?;
            let m2 = match source {
                MaskSource::Modulated => g.mul_bcast(ws, m)?,
                MaskSource::Raw => m,
            };
            let wc = channel_mask(g, m2, p)?;
            let full = expand_gates(g, wc, c)?;
            let joint = g.mul_bcast(ws, full)?;
            let y = g.mul(joint, v)?;
            Ok(out(y, Some(ws), Some(wc)))
        }
        AttentionVariant::Csa => {
            let wc = channel_mask(g, m, p)?;
            let m2 = match source {
                MaskSource::Modulated => g.mul_bcast(wc, m)?,
                MaskSource::Raw => m,
            };
            let ws = spatial_mask(g, m2, p)?;
            let full = expand_gates(g, wc, c)?;
            let joint = g.mul_bcast(full, ws)?;
            let y = g.mul(joint, v)?;
            Ok(out(y, Some(ws), Some(wc)))
        }
        AttentionVariant::CparS => {
            let sl = spatial_logits(g, m, p)?;
            let cl = channel_logits(g, m, p)?;
            let joint = g.add_bcast(sl, cl)?;
            let flat = g.reshape(joint, &[n * t, cr, h, w])?;
            let expanded = g.conv2d(flat, p.expand_w, Some(p.expand_b), 1, Padding::Valid)?;
            let expanded = g.reshape(expanded, &[n, t, c, h, w])?;
            let mask = g.sigmoid(expanded);
            let y = g.mul(mask, v)?;
            let ws = g.sigmoid(sl);
            Ok(out(y, Some(ws), None))
        }
    }
}

/// The spatial mask a variant would show for inspection. Variants without a
/// spatial stage report the mask of the raw motion field.
pub fn inspect_spatial_mask<F: Real>(
    g: &mut Graph<F>,
    v: Var,
    variant: AttentionVariant,
    p: &MamParams<Var>,
) -> Result<Var> {
    let out = apply_mam(g, v, variant, p)?;
    match out.spatial_mask {
        Some(ws) => Ok(ws),
        None => {
            let reduced = channel_reduce(g, v, p)?;
            let m = temporal_difference(g, reduced)?;
            spatial_mask(g, m, p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_grad_with, tensor_relative_error};
    use crate::exec::Exec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn bind<F: Real>(g: &mut Graph<F>, p: &MamParams<Tensor<F>>) -> MamParams<Var> {
        p.map(|_, t| g.param(t.clone()))
    }

    fn cfg(c: usize, r: usize) -> MamConfig {
        MamConfig {
            channels: c,
            reduction: r,
            ..MamConfig::default()
        }
    }

    fn seeded_clip(shape: &[usize], seed: u64) -> Tensor<f64> {
        SeedRng::new(seed).normal_tensor(shape, 1.0)
    }

    /// Copies one frame across time so the clip is static.
    fn static_clip(shape: [usize; 5], seed: u64) -> Tensor<f64> {
        let [n, t, c, h, w] = shape;
        let frame = seeded_clip(&[n, 1, c, h, w], seed);
        Tensor::from_fn(&shape, |i| {
            let inner = c * h * w;
            let b = i / (t * inner);
            frame.data()[b * inner + i % inner]
        })
    }

    #[test]
    fn variant_names_round_trip() {
        for v in AttentionVariant::ALL {
            assert_eq!(v.as_str().parse::<AttentionVariant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(serde_json::from_str::<AttentionVariant>(&json).unwrap(), v);
        }
        assert!("SAC".parse::<AttentionVariant>().is_err());
    }

    #[test]
    fn reduce_identity_zero_and_loop_oracle() {
        let mut g = Graph::<f64>::inference();
        let x = seeded_clip(&[1, 2, 3, 2, 2], 1);
        let xv = g.constant(x.clone());
        let mut p = MamParams::<Tensor<f64>>::init(&cfg(3, 1), 0).unwrap();
        p.reduce_w = Tensor::eye(3).reshape(&[3, 3, 1, 1]).unwrap();
        let pv = bind(&mut g, &p);
        let y = channel_reduce(&mut g, xv, &pv).unwrap();
        assert_eq!(g.value(y), &x);

        p.reduce_w = Tensor::zeros(&[3, 3, 1, 1]);
        let pv = bind(&mut g, &p);
        let y = channel_reduce(&mut g, xv, &pv).unwrap();
        assert_eq!(g.value(y), &Tensor::zeros(&[1, 2, 3, 2, 2]));

        let x = seeded_clip(&[2, 3, 4, 3, 2], 2);
        let p = MamParams::<Tensor<f64>>::init(&cfg(4, 2), 9).unwrap();
        let xv = g.constant(x.clone());
        let pv = bind(&mut g, &p);
        let y = channel_reduce(&mut g, xv, &pv).unwrap();
        let y = g.value(y);
        assert_eq!(y.shape(), &[2, 3, 2, 3, 2]);
        for n in 0..2 {
            for t in 0..3 {
                for o in 0..2 {
                    for hh in 0..3 {
                        for ww in 0..2 {
                            let mut acc = 0.0;
                            for ci in 0..4 {
                                acc += p.reduce_w.at(&[o, ci, 0, 0]) * x.at(&[n, t, ci, hh, ww]);
                            }
                            assert_relative_eq!(y.at(&[n, t, o, hh, ww]), acc, epsilon = 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn reduction_must_divide_channels() {
        assert!(matches!(MamParams::<Tensor<f32>>::init(&cfg(6, 4), 0), Err(Error::Config(_))));
        let mut g = Graph::<f64>::inference();
        let x = g.constant(Tensor::zeros(&[1, 2, 6, 2, 2]));
        let mut p = MamParams::<Tensor<f64>>::init(&cfg(4, 1), 0).unwrap();
        p.reduce_w = Tensor::zeros(&[4, 6, 1, 1]);
        let pv = bind(&mut g, &p);
        assert!(matches!(channel_reduce(&mut g, x, &pv), Err(Error::Config(_))));
    }

    #[test]
    fn temporal_difference_examples() {
        let mut g = Graph::<f64>::inference();
        let constant = static_clip([1, 4, 2, 2, 2], 3);
        let c = g.constant(constant);
        let m = temporal_difference(&mut g, c).unwrap();
        assert!(g.value(m).data().iter().all(|&v| v == 0.0));

        // Linear ramp v_t = t * c.
        let base = seeded_clip(&[1, 1, 2, 2, 2], 4);
        let ramp = Tensor::from_fn(&[1, 5, 2, 2, 2], |i| (i / 8) as f64 * base.data()[i % 8]);
        let r = g.constant(ramp);
        let m = temporal_difference(&mut g, r).unwrap();
        let mv = g.value(m);
        for t in 0..4 {
            for k in 0..8 {
                assert_relative_eq!(mv.data()[t * 8 + k], base.data()[k], epsilon = 1e-12);
            }
        }
        assert!(mv.data()[32..].iter().all(|&v| v == 0.0));

        // Spike of magnitude a at frame k.
        let (a, k) = (2.5, 2);
        let spike = Tensor::from_fn(&[1, 5, 1, 1, 1], |i| if i == k { a } else { 0.0 });
        let s = g.constant(spike);
        let m = temporal_difference(&mut g, s).unwrap();
        assert_eq!(g.value(m).data(), &[0.0, a, -a, 0.0, 0.0]);

        let one = g.constant(Tensor::zeros(&[1, 1, 1, 1, 1]));
        assert!(matches!(temporal_difference(&mut g, one), Err(Error::Contract(_))));
    }

    #[test]
    fn spatial_mask_examples() {
        let c = cfg(8, 4);
        let p = MamParams::<Tensor<f64>>::init(&c, 5).unwrap();
        let mut g = Graph::<f64>::inference();
        let pv = bind(&mut g, &p);
        let m = g.constant(Tensor::zeros(&[2, 3, 2, 4, 4]));
        let ws = spatial_mask(&mut g, m, &pv).unwrap();
        assert_eq!(g.shape(ws), &[2, 3, 1, 4, 4]);
        assert!(g.value(ws).data().iter().all(|&v| v == 0.5));

        // Straight-line reference: channel mean, two explicit convolutions, sigmoid.
        let mut p = p;
        p.spa_b1 = SeedRng::new(8).normal_tensor(&[8], 0.5);
        p.spa_b2 = Tensor::from_f64(&[1], &[0.1]).unwrap();
        let mt = seeded_clip(&[1, 2, 2, 3, 3], 6);
        let mut g = Graph::<f64>::inference();
        let pv = bind(&mut g, &p);
        let m = g.constant(mt.clone());
        let ws = spatial_mask(&mut g, m, &pv).unwrap();
        let ws = g.value(ws).clone();
        let conv = |img: &dyn Fn(isize, isize, usize) -> f64, k: &Tensor<f64>, co: usize, cin: usize, y: usize, x: usize| {
            let mut acc = 0.0;
            for ci in 0..cin {
                for ky in 0..3 {
                    for kx in 0..3 {
                        acc += k.at(&[co, ci, ky, kx]) * img(y as isize + ky as isize - 1, x as isize + kx as isize - 1, ci);
                    }
                }
            }
            acc
        };
        for t in 0..2 {
            let s = |y: isize, x: isize, _c: usize| {
                if !(0..3).contains(&y) || !(0..3).contains(&x) {
                    0.0
                } else {
                    (mt.at(&[0, t, 0, y as usize, x as usize]) + mt.at(&[0, t, 1, y as usize, x as usize])) / 2.0
                }
            };
            let mut hidden = vec![0.0; 8 * 9];
            for co in 0..8 {
                for y in 0..3 {
                    for x in 0..3 {
                        hidden[co * 9 + y * 3 + x] = (conv(&s, &p.spa_w1, co, 1, y, x) + p.spa_b1.data()[co]).max(0.0);
                    }
                }
            }
            let hid = |y: isize, x: isize, c: usize| {
                if !(0..3).contains(&y) || !(0..3).contains(&x) {
                    0.0
                } else {
                    hidden[c * 9 + y as usize * 3 + x as usize]
                }
            };
            for y in 0..3 {
                for x in 0..3 {
                    let logit = conv(&hid, &p.spa_w2, 0, 8, y, x) + p.spa_b2.data()[0];
                    let expect = 1.0 / (1.0 + (-logit).exp());
                    assert_relative_eq!(ws.at(&[0, t, 0, y, x]), expect, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn channel_mask_examples() {
        let c = MamConfig {
            channels: 1,
            reduction: 1,
            bottleneck_reduction: 1,
            ..MamConfig::default()
        };
        let mut p = MamParams::<Tensor<f64>>::init(&c, 0).unwrap();
        p.cha_w0 = Tensor::from_f64(&[1, 1], &[1.0]).unwrap();
        p.cha_w1 = Tensor::from_f64(&[1, 1], &[2.0]).unwrap();
        let mut g = Graph::<f64>::inference();
        let pv = bind(&mut g, &p);
        let pos = g.constant(Tensor::ones(&[1, 1, 1, 2, 2]));
        let wc = channel_mask(&mut g, pos, &pv).unwrap();
        assert_relative_eq!(g.value(wc).item(), 1.0 / (1.0 + (-2.0f64).exp()), epsilon = 1e-15);
        assert_relative_eq!(g.value(wc).item(), 0.880797, epsilon = 1e-6);
        let neg = g.constant(Tensor::full(&[1, 1, 1, 2, 2], -1.0));
        let wc = channel_mask(&mut g, neg, &pv).unwrap();
        assert_eq!(g.value(wc).item(), 0.5);

        let p = MamParams::<Tensor<f64>>::init(&cfg(16, 4), 1).unwrap();
        let pv = bind(&mut g, &p);
        let zero = g.constant(Tensor::zeros(&[2, 3, 4, 2, 2]));
        let wc = channel_mask(&mut g, zero, &pv).unwrap();
        assert_eq!(g.shape(wc), &[2, 3, 4, 1, 1]);
        assert!(g.value(wc).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn apply_examples() {
        let c = cfg(8, 4);
        let p = MamParams::<Tensor<f64>>::init(&c, 2).unwrap();
        let x = seeded_clip(&[1, 3, 8, 2, 2], 10);
        let mut g = Graph::<f64>::inference();
        let pv = bind(&mut g, &p);
        let xv = g.constant(x.clone());
        let out = apply_mam(&mut g, xv, AttentionVariant::None, &pv).unwrap();
        assert_eq!(g.value(out.features), &x);

        // Hand-set half masks via zero conv/gate weights.
        let mut half = p.clone();
        half.spa_w2 = Tensor::zeros(half.spa_w2.shape());
        half.cha_w1 = Tensor::zeros(half.cha_w1.shape());
        half.expand_w = Tensor::zeros(half.expand_w.shape());
        let hv = bind(&mut g, &half);
        let spa = apply_mam(&mut g, xv, AttentionVariant::SpaOnly, &hv).unwrap();
        assert_eq!(g.value(spa.features), &x.map(|v| 0.5 * v));
        let both = apply_mam(&mut g, spa.features, AttentionVariant::ChaOnly, &hv).unwrap();
        assert_eq!(g.value(both.features), &x.map(|v| 0.25 * v));
        let par = apply_mam(&mut g, xv, AttentionVariant::CparS, &hv).unwrap();
        assert_eq!(g.value(par.features), &x.map(|v| 0.5 * v));
    }

    #[test]
    fn static_scene_is_scaled_by_half_per_mask() {
        let c = cfg(8, 4);
        let p = MamParams::<Tensor<f64>>::init(&c, 4).unwrap();
        let x = static_clip([2, 4, 8, 3, 3], 11);
        for variant in AttentionVariant::ALL {
            let mut g = Graph::<f64>::inference();
            let pv = bind(&mut g, &p);
            let xv = g.constant(x.clone());
            let out = apply_mam(&mut g, xv, variant, &pv).unwrap();
            let k = variant.mask_count();
            let scale = 0.5f64.powi(k);
            assert_eq!(g.value(out.features), &x.map(|v| v * scale), "{variant}");
        }
    }

    #[test]
    fn raw_csa_equals_raw_sca_bit_exactly() {
        let c = cfg(8, 2);
        let mut p = MamParams::<Tensor<f32>>::init(&c, 6).unwrap();
        p.spa_b1 = SeedRng::new(1).normal_tensor(&[8], 0.3);
        p.cha_b0 = SeedRng::new(2).normal_tensor(p.cha_b0.shape(), 0.3);
        let x: Tensor<f32> = SeedRng::new(12).normal_tensor(&[2, 5, 8, 4, 4], 1.0);
        let mut g = Graph::<f32>::inference();
        let pv = bind(&mut g, &p);
        let xv = g.constant(x);
        let sca = apply_mam_with(&mut g, xv, AttentionVariant::Sca, &pv, MaskSource::Raw).unwrap();
        let csa = apply_mam_with(&mut g, xv, AttentionVariant::Csa, &pv, MaskSource::Raw).unwrap();
        assert_eq!(g.value(sca.features), g.value(csa.features));
        let csa_mod = apply_mam(&mut g, xv, AttentionVariant::Csa, &pv).unwrap();
        assert_ne!(g.value(sca.features), g.value(csa_mod.features));
    }

    #[test]
    fn perturbing_one_frame_changes_only_adjacent_motion_slices() {
        let x = seeded_clip(&[1, 6, 2, 2, 2], 13);
        let mut y = x.clone();
        let frame = 3;
        for v in &mut y.data_mut()[frame * 8..(frame + 1) * 8] {
            *v += 1.0;
        }
        let mut g = Graph::<f64>::inference();
        let (a, b) = (g.constant(x), g.constant(y));
        let (ma, mb) = (temporal_difference(&mut g, a).unwrap(), temporal_difference(&mut g, b).unwrap());
        for t in 0..6 {
            let changed = (0..8).any(|k| g.value(ma).data()[t * 8 + k] != g.value(mb).data()[t * 8 + k]);
            assert_eq!(changed, t == frame - 1 || t == frame, "slice {t}");
        }
    }

    #[test]
    fn gradients_flow_to_mask_parameters() {
        let c = cfg(8, 4);
        let mut p = MamParams::<Tensor<f64>>::init(&c, 3).unwrap();
        p.spa_b1 = Tensor::full(&[8], 0.3);
        p.cha_b0 = Tensor::full(p.cha_b0.shape(), 0.3);
        let x = seeded_clip(&[1, 3, 8, 3, 3], 14);
        let probe = SeedRng::new(15).normal_tensor::<f64>(&[1, 3, 8, 3, 3], 1.0);
        for variant in [AttentionVariant::Sca, AttentionVariant::Csa, AttentionVariant::CparS] {
            let loss_of = |params: &MamParams<Tensor<f64>>, record: bool| {
                let mut g = if record { Graph::<f64>::new() } else { Graph::inference() };
                let pv = bind(&mut g, params);
                let xv = g.constant(x.clone());
                let out = apply_mam(&mut g, xv, variant, &pv).unwrap();
                let w = g.constant(probe.clone());
                let prod = g.mul(out.features, w).unwrap();
                let l = g.sum(prod);
                (g, pv, l)
            };
            let (g, pv, l) = loss_of(&p, true);
            let grads = g.backward(l).unwrap();
            let names = ["spa_w1", "spa_w2", "cha_w0", "cha_w1", "reduce_w"];
            for ((name, var), (_, tensor)) in pv.fields().into_iter().zip(p.fields()) {
                if !names.contains(&name.as_str()) {
                    continue;
                }
                let analytic = grads.get(*var).unwrap();
                assert!(analytic.max_abs() > 0.0, "{variant} {name} has zero gradient");
                let numeric = finite_diff_grad_with(
                    Exec::Sequential,
                    |t| {
                        let mut q = p.clone();
                        *q.fields_mut().into_iter().find(|(n, _)| *n == name).unwrap().1 = t.clone();
                        let (g, _, l) = loss_of(&q, false);
                        (g.value(l).item(), g.relu_signature())
                    },
                    tensor,
                    1e-3,
                    1e-9,
                );
                let rel = tensor_relative_error(analytic, &numeric);
                assert!(rel < 1e-6, "{variant} {name}: {rel:e}");
            }
        }
    }

    proptest! {
        #[test]
        fn masks_stay_strictly_inside_unit_interval(seed in 0u64..500, scale in 0.1f64..4.0) {
            let c = cfg(8, 4);
            let mut p = MamParams::<Tensor<f32>>::init(&c, seed).unwrap();
            p.spa_b2 = Tensor::from_f64(&[1], &[scale / 10.0]).unwrap();
            let x: Tensor<f32> = SeedRng::new(seed + 1).normal_tensor(&[1, 3, 8, 3, 3], scale);
            let mut g = Graph::<f32>::inference();
            let pv = bind(&mut g, &p);
            let xv = g.constant(x);
            for variant in [AttentionVariant::Sca, AttentionVariant::Csa, AttentionVariant::CparS] {
                let out = apply_mam(&mut g, xv, variant, &pv).unwrap();
                for mask in [out.spatial_mask, out.channel_mask].into_iter().flatten() {
                    prop_assert!(g.value(mask).data().iter().all(|&v| v > 0.0 && v < 1.0));
                }
            }
        }
    }
}
