//! The detector: compact visual and audio encoders, the motion-aware
//! module, a fusion stage and a linear two-way classifier.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agm::{self, AgmConfig, AgmParams, AudioTokenSeq};
use crate::autograd::{sigmoid, Graph, Padding, Var};
use crate::error::{Error, Result};
use crate::mam::{self, AttentionVariant, MamConfig, MamParams};
use crate::param_struct;
use crate::rng::{derive_str, SeedRng};
use crate::tensor::{Real, Tensor};

pub mod checkpoint;
pub mod verify;

/// Index of the forged class in the logit vector.
pub const FAKE: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    Agm,
    Concat,
    VisualOnly,
}

impl Fusion {
    pub fn as_str(self) -> &'static str {
        match self {
            Fusion::Agm => "agm",
            Fusion::Concat => "concat",
            Fusion::VisualOnly => "visual_only",
        }
    }
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "agm" => Ok(Fusion::Agm),
            "concat" => Ok(Fusion::Concat),
            "visual_only" => Ok(Fusion::VisualOnly),
            other => Err(Error::Config(format!("unknown fusion mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub frame_size: usize,
    /// Feature channels after the visual encoder.
    pub channels: usize,
    pub audio_raw_dim: usize,
    pub audio_dim: usize,
    pub reduction: usize,
    pub bottleneck_reduction: usize,
    pub spa_hidden: usize,
    pub spa_kernel: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub pos_enc: bool,
    pub variant: AttentionVariant,
    pub fusion: Fusion,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 3,
            frame_size: 32,
            channels: 16,
            audio_raw_dim: 8,
            audio_dim: 32,
            reduction: 4,
            bottleneck_reduction: 4,
            spa_hidden: 8,
            spa_kernel: 3,
            d_model: 64,
            heads: 4,
            ffn_hidden: 256,
            pos_enc: true,
            variant: AttentionVariant::Sca,
            fusion: Fusion::Agm,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_size == 0 || !self.frame_size.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "frame size {} must be a positive multiple of 4",
                self.frame_size
            )));
        }
        if self.channels < 2 || !self.channels.is_multiple_of(2) {
            return Err(Error::Config(format!("channels {} must be even", self.channels)));
        }
        if self.in_channels == 0 || self.audio_raw_dim == 0 {
            return Err(Error::Config("input widths must be positive".into()));
        }
        self.mam().validate()?;
        self.agm().validate()
    }

    pub fn mam(&self) -> MamConfig {
        MamConfig {
            channels: self.channels,
            reduction: self.reduction,
            bottleneck_reduction: self.bottleneck_reduction,
            spa_hidden: self.spa_hidden,
            spa_kernel: self.spa_kernel,
        }
    }

    pub fn agm(&self) -> AgmConfig {
        AgmConfig {
            channels: self.channels,
            audio_dim: self.audio_dim,
            d_model: self.d_model,
            heads: self.heads,
            ffn_hidden: self.ffn_hidden,
            pos_enc: self.pos_enc,
            ln_eps: 1e-5,
        }
    }

    pub fn feature_size(&self) -> usize {
        self.frame_size / 4
    }

    /// Width of the vector the classifier sees.
    pub fn head_input(&self) -> usize {
        match self.fusion {
            Fusion::Agm | Fusion::VisualOnly => self.d_model,
            Fusion::Concat => self.d_model + self.audio_dim,
        }
    }
}

param_struct! {
    pub struct EncoderParams {
        conv1_w,
        conv1_b,
        conv2_w,
        conv2_b,
        audio_w,
        audio_b,
    }
}

param_struct! {
    pub struct HeadParams {
        w,
        b,
    }
}

/// Every learnable tensor of the detector, addressed by dotted names such
/// as `mam.spa_w1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub encoder: EncoderParams<T>,
    pub mam: MamParams<T>,
    pub agm: AgmParams<T>,
    pub head: HeadParams<T>,
}

impl<T> ModelParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> ModelParams<U> {
        ModelParams {
            encoder: self.encoder.map(|n, t| f(&format!("encoder.{n}"), t)),
            mam: self.mam.map(|n, t| f(&format!("mam.{n}"), t)),
            agm: self.agm.map(|n, t| f(&format!("agm.{n}"), t)),
            head: self.head.map(|n, t| f(&format!("head.{n}"), t)),
        }
    }

    pub fn try_map<U, E>(
        &self,
        mut f: impl FnMut(&str, &T) -> std::result::Result<U, E>,
    ) -> std::result::Result<ModelParams<U>, E> {
        Ok(ModelParams {
            encoder: self.encoder.try_map(|n, t| f(&format!("encoder.{n}"), t))?,
            mam: self.mam.try_map(|n, t| f(&format!("mam.{n}"), t))?,
            agm: self.agm.try_map(|n, t| f(&format!("agm.{n}"), t))?,
            head: self.head.try_map(|n, t| f(&format!("head.{n}"), t))?,
        })
    }

    pub fn fields(&self) -> Vec<(String, &T)> {
        let mut out: Vec<(String, &T)> = Vec::new();
        out.extend(self.encoder.fields().into_iter().map(|(n, t)| (format!("encoder.{n}"), t)));
        out.extend(self.mam.fields().into_iter().map(|(n, t)| (format!("mam.{n}"), t)));
        out.extend(self.agm.fields().into_iter().map(|(n, t)| (format!("agm.{n}"), t)));
        out.extend(self.head.fields().into_iter().map(|(n, t)| (format!("head.{n}"), t)));
        out
    }

    pub fn fields_mut(&mut self) -> Vec<(String, &mut T)> {
        let mut out: Vec<(String, &mut T)> = Vec::new();
        out.extend(self.encoder.fields_mut().into_iter().map(|(n, t)| (format!("encoder.{n}"), t)));
        out.extend(self.mam.fields_mut().into_iter().map(|(n, t)| (format!("mam.{n}"), t)));
        out.extend(self.agm.fields_mut().into_iter().map(|(n, t)| (format!("agm.{n}"), t)));
        out.extend(self.head.fields_mut().into_iter().map(|(n, t)| (format!("head.{n}"), t)));
        out
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut T> {
        self.fields_mut().into_iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

/// How the classifier weights start out.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum HeadInit {
    /// All zero, so every cold-start prediction is exactly one half.
    #[default]
    Zero,
    Glorot,
}

impl<F: Real> ModelParams<Tensor<F>> {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        Self::init_with(cfg, seed, HeadInit::Zero)
    }

    pub fn init_with(cfg: &ModelConfig, seed: u64, head: HeadInit) -> Result<Self> {
        cfg.validate()?;
        let (cin, c, half) = (cfg.in_channels, cfg.channels, cfg.channels / 2);
        let w = |name: &str, shape: &[usize], fan_in: usize, fan_out: usize| {
            SeedRng::new(derive_str(seed, name)).glorot::<F>(shape, fan_in, fan_out)
        };
        let encoder = EncoderParams {
            conv1_w: w("encoder.conv1_w", &[half, cin, 3, 3], cin * 9, half * 9),
            conv1_b: Tensor::zeros(&[half]),
            conv2_w: w("encoder.conv2_w", &[c, half, 3, 3], half * 9, c * 9),
            conv2_b: Tensor::zeros(&[c]),
            audio_w: w("encoder.audio_w", &[cfg.audio_raw_dim, cfg.audio_dim], cfg.audio_raw_dim, cfg.audio_dim),
            audio_b: Tensor::zeros(&[cfg.audio_dim]),
        };
        let k = cfg.head_input();
        let head = HeadParams {
            w: match head {
                HeadInit::Zero => Tensor::zeros(&[k, 2]),
                HeadInit::Glorot => w("head.w", &[k, 2], k, 2),
            },
            b: Tensor::zeros(&[2]),
        };
        Ok(ModelParams {
            encoder,
            mam: MamParams::init(&cfg.mam(), seed)?,
            agm: AgmParams::init(&cfg.agm(), seed)?,
            head,
        })
    }

    /// Random classifier and small random biases and norm offsets, so no
    /// relu sits exactly on its kink. Used for gradient verification.
    pub fn init_for_gradcheck(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut p = Self::init_with(cfg, seed, HeadInit::Glorot)?;
        for (name, t) in p.fields_mut() {
            let tail = name.rsplit('.').next().unwrap_or("");
            let is_bias = tail == "b" || tail.contains("_b");
            let is_gain = tail.ends_with("_g");
            if is_bias || is_gain {
                let mut rng = SeedRng::new(derive_str(seed, &format!("gradcheck.{name}")));
                let base = if is_gain { 1.0 } else { 0.0 };
                *t = Tensor::from_fn(t.shape(), |_| F::lit(base + rng.normal(0.1)));
            }
        }
        Ok(p)
    }

    pub fn count(&self) -> usize {
        self.fields().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<G: Real>(&self) -> ModelParams<Tensor<G>> {
        self.map(|_, t| t.cast())
    }

    /// Places every tensor on `g` as a trainable leaf.
    pub fn bind(&self, g: &mut Graph<F>) -> ModelParams<Var> {
        self.map(|_, t| g.param(t.clone()))
    }
}

/// Frames `(N, T, C_in, H, W)` to features `(N, T, C, H/4, W/4)`.
pub fn visual_encode<F: Real>(
    g: &mut Graph<F>,
    cfg: &ModelConfig,
    p: &EncoderParams<Var>,
    x_v: Var,
) -> Result<Var> {
    let s = g.shape(x_v).to_vec();
    if s.len() != 5 || s[2] != cfg.in_channels || s[3] != cfg.frame_size || s[4] != cfg.frame_size {
        return Err(Error::Config(format!(
            "frames {s:?} do not match configured (N, T, {}, {}, {})",
            cfg.in_channels, cfg.frame_size, cfg.frame_size
        )));
    }
    let (n, t) = (s[0], s[1]);
    let x = g.reshape(x_v, &[n * t, s[2], s[3], s[4]])?;
    let h = g.conv2d(x, p.conv1_w, Some(p.conv1_b), 2, Padding::Same)?;
    let h = g.relu(h);
    let h = g.conv2d(h, p.conv2_w, Some(p.conv2_b), 2, Padding::Same)?;
    let h = g.relu(h);
    let f = cfg.feature_size();
    g.reshape(h, &[n, t, cfg.channels, f, f])
}

/// Raw per-step audio features `(N, T_a, d_raw)` to tokens `(N, T_a, d_a)`.
pub fn audio_encode<F: Real>(g: &mut Graph<F>, p: &EncoderParams<Var>, x_a: Var) -> Result<AudioTokenSeq> {
    let s = g.shape(x_a).to_vec();
    if s.len() != 3 {
        return Err(Error::Contract(format!("audio features must be (N, T_a, d), got {s:?}")));
    }
    Ok(AudioTokenSeq(g.linear(x_a, p.audio_w, Some(p.audio_b))?))
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// `(N, 2)`.
    pub logits: Var,
    pub spatial_mask: Option<Var>,
    pub attention: Option<Var>,
}

pub fn forward_graph<F: Real>(
    g: &mut Graph<F>,
    cfg: &ModelConfig,
    p: &ModelParams<Var>,
    x_v: Var,
    x_a: Var,
) -> Result<ForwardOutput> {
    let v = visual_encode(g, cfg, &p.encoder, x_v)?;
    let m = mam::apply_mam(g, v, cfg.variant, &p.mam)?;
    let acfg = cfg.agm();
    let mut attention = None;
    let pooled = match cfg.fusion {
        Fusion::Agm => {
            let a = audio_encode(g, &p.encoder, x_a)?;
            let out = agm::agm_block(g, m.features, a, &p.agm, &acfg)?;
            attention = Some(out.attention);
            g.reduce_mean(out.fused, &[1])?
        }
        Fusion::Concat => {
            let a = audio_encode(g, &p.encoder, x_a)?;
            if g.shape(a.0)[0] != g.shape(v)[0] {
                return Err(Error::Contract("audio and video batch sizes differ".into()));
            }
            let tokens = agm::tokenize_visual(g, m.features, &p.agm, &acfg)?;
            let vbar = g.reduce_mean(tokens.0, &[1])?;
            let abar = g.reduce_mean(a.0, &[1])?;
            g.concat(vbar, abar, 1)?
        }
        Fusion::VisualOnly => {
            let tokens = agm::tokenize_visual(g, m.features, &p.agm, &acfg)?;
            g.reduce_mean(tokens.0, &[1])?
        }
    };
    let logits = g.linear(pooled, p.head.w, Some(p.head.b))?;
    Ok(ForwardOutput {
        logits,
        spatial_mask: m.spatial_mask,
        attention,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub logits: [f64; 2],
    /// Probability of the forged class.
    pub y_hat: f64,
}

impl Prediction {
    pub fn from_logits(logits: [f64; 2]) -> Self {
        Prediction {
            logits,
            y_hat: sigmoid(logits[FAKE] - logits[1 - FAKE]),
        }
    }
}

/// Scores a batch without recording a tape.
pub fn predict<F: Real>(
    cfg: &ModelConfig,
    params: &ModelParams<Tensor<F>>,
    x_v: &Tensor<F>,
    x_a: &Tensor<F>,
) -> Result<Vec<Prediction>> {
    let mut g = Graph::<F>::inference();
    let p = params.map(|_, t| g.constant(t.clone()));
    let (v, a) = (g.constant(x_v.clone()), g.constant(x_a.clone()));
    let out = forward_graph(&mut g, cfg, &p, v, a)?;
    Ok(g
        .value(out.logits)
        .data()
        .chunks(2)
        .map(|l| Prediction::from_logits([l[0].as_f64(), l[1].as_f64()]))
        .collect())
}

/// Two-class cross-entropy via log-sum-exp.
pub fn loss(pred: &Prediction, y: usize) -> Result<f64> {
    if y > 1 {
        return Err(Error::Contract(format!("label {y} is not 0 or 1")));
    }
    let d = pred.logits[1 - y] - pred.logits[y];
    Ok(if d > 0.0 { d + (-d).exp().ln_1p() } else { d.exp().ln_1p() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn micro(fusion: Fusion) -> ModelConfig {
        ModelConfig {
            frame_size: 8,
            channels: 8,
            audio_raw_dim: 3,
            audio_dim: 4,
            reduction: 4,
            spa_hidden: 2,
            d_model: 16,
            heads: 4,
            ffn_hidden: 8,
            fusion,
            ..ModelConfig::default()
        }
    }

    fn clip(cfg: &ModelConfig, n: usize, t: usize, ta: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
        let mut rng = SeedRng::new(seed);
        let f = cfg.frame_size;
        let v = Tensor::from_fn(&[n, t, cfg.in_channels, f, f], |_| rng.uniform(0.0, 1.0));
        let a = rng.normal_tensor(&[n, ta, cfg.audio_raw_dim], 1.0);
        (v, a)
    }

    #[test]
    fn zero_classifier_predicts_one_half() {
        for fusion in [Fusion::Agm, Fusion::Concat, Fusion::VisualOnly] {
            let cfg = micro(fusion);
            let p = ModelParams::<Tensor<f32>>::init(&cfg, 1).unwrap();
            let (v, a) = clip(&cfg, 3, 4, 5, 2);
            for pred in predict(&cfg, &p, &v.cast(), &a.cast()).unwrap() {
                assert_eq!(pred.y_hat, 0.5);
                assert_eq!(pred.logits, [0.0, 0.0]);
            }
        }
    }

    #[test]
    fn loss_examples() {
        let p = Prediction::from_logits([0.0, 0.0]);
        assert_relative_eq!(loss(&p, 0).unwrap(), std::f64::consts::LN_2, epsilon = 1e-15);
        let p = Prediction::from_logits([2.0, 0.0]);
        assert_relative_eq!(loss(&p, 0).unwrap(), (1.0 + (-2.0f64).exp()).ln(), epsilon = 1e-15);
        assert_relative_eq!(loss(&p, 0).unwrap(), 0.126928, epsilon = 1e-6);
        assert!(matches!(loss(&p, 2), Err(Error::Contract(_))));
        let p = Prediction::from_logits([800.0, -800.0]);
        assert!(loss(&p, 1).unwrap().is_finite());
    }

    proptest! {
        #[test]
        fn loss_is_shift_invariant(a in -64i32..64, b in -64i32..64, c in -64i32..64, y in 0usize..2) {
            let (a, b, c) = (a as f64 / 8.0, b as f64 / 8.0, c as f64 / 8.0);
            let base = loss(&Prediction::from_logits([a, b]), y).unwrap();
            let shifted = loss(&Prediction::from_logits([a + c, b + c]), y).unwrap();
            prop_assert_eq!(base, shifted);
            prop_assert!(base >= 0.0);
        }
    }

    #[test]
    fn visual_encoder_examples() {
        let cfg = micro(Fusion::VisualOnly);
        let p = ModelParams::<Tensor<f64>>::init(&cfg, 3).unwrap();
        let mut g = Graph::<f64>::inference();
        let pv = p.bind(&mut g);
        let z = g.constant(Tensor::zeros(&[2, 3, 3, 8, 8]));
        let f = visual_encode(&mut g, &cfg, &pv.encoder, z).unwrap();
        assert_eq!(g.shape(f), &[2, 3, 8, 2, 2]);
        assert!(g.value(f).data().iter().all(|&v| v == 0.0));

        let bad = g.constant(Tensor::zeros(&[1, 2, 3, 12, 12]));
        assert!(matches!(visual_encode(&mut g, &cfg, &pv.encoder, bad), Err(Error::Config(_))));

        let (v, _) = clip(&cfg, 1, 2, 1, 4);
        let xv = g.constant(v.clone());
        let f = visual_encode(&mut g, &cfg, &pv.encoder, xv).unwrap();
        let frames = v.clone().reshape(&[2, 3, 8, 8]).unwrap();
        let relu = |t: Tensor<f64>| ops::pointwise(&t, ops::Pointwise::Relu);
        let add_bias = |t: Tensor<f64>, b: &Tensor<f64>| {
            let plane = t.shape()[2] * t.shape()[3];
            let c = t.shape()[1];
            Tensor::from_fn(t.shape(), |i| t.data()[i] + b.data()[(i / plane) % c])
        };
        let h = relu(add_bias(ops::conv2d(&frames, &p.encoder.conv1_w, 2, Padding::Same).unwrap(), &p.encoder.conv1_b));
        let h = relu(add_bias(ops::conv2d(&h, &p.encoder.conv2_w, 2, Padding::Same).unwrap(), &p.encoder.conv2_b));
        assert_eq!(g.value(f).data(), h.data());
    }

    #[test]
    fn audio_encoder_examples() {
        let cfg = ModelConfig {
            audio_raw_dim: 4,
            audio_dim: 4,
            ..micro(Fusion::Agm)
        };
        let mut p = ModelParams::<Tensor<f64>>::init(&cfg, 5).unwrap();
        let mut g = Graph::<f64>::inference();
        let pv = p.bind(&mut g);
        let z = g.constant(Tensor::zeros(&[2, 3, 4]));
        let a = audio_encode(&mut g, &pv.encoder, z).unwrap();
        assert!(g.value(a.0).data().iter().all(|&v| v == 0.0));

        let x = SeedRng::new(6).normal_tensor::<f64>(&[2, 3, 4], 1.0);
        let xv = g.constant(x.clone());
        let a = audio_encode(&mut g, &pv.encoder, xv).unwrap();
        let flat = x.clone().reshape(&[6, 4]).unwrap();
        let expect = ops::matmul(&flat, &p.encoder.audio_w).unwrap();
        assert_eq!(g.value(a.0).data(), expect.data());

        p.encoder.audio_w = Tensor::eye(4);
        let pv = p.bind(&mut g);
        let a = audio_encode(&mut g, &pv.encoder, xv).unwrap();
        assert_eq!(g.value(a.0), &x);
    }

    #[test]
    fn visual_only_ignores_audio_bit_exactly() {
        let cfg = micro(Fusion::VisualOnly);
        let p = ModelParams::<Tensor<f32>>::init_with(&cfg, 7, HeadInit::Glorot).unwrap();
        let (v, a) = clip(&cfg, 2, 4, 5, 8);
        let noise = SeedRng::new(9).normal_tensor::<f32>(&[2, 5, 3], 10.0);
        let base = predict(&cfg, &p, &v.cast(), &a.cast()).unwrap();
        let other = predict(&cfg, &p, &v.cast(), &noise).unwrap();
        assert_eq!(base, other);
        assert_ne!(base[0].y_hat, 0.5);
    }

    #[test]
    fn fused_models_respond_to_audio() {
        for fusion in [Fusion::Agm, Fusion::Concat] {
            let cfg = micro(fusion);
            let p = ModelParams::<Tensor<f64>>::init_with(&cfg, 10, HeadInit::Glorot).unwrap();
            let (v, a) = clip(&cfg, 1, 4, 5, 11);
            let base = predict(&cfg, &p, &v, &a).unwrap()[0].y_hat;
            let changed = (0..5u64).any(|s| {
                let other = SeedRng::new(100 + s).normal_tensor::<f64>(a.shape(), 1.0);
                (predict(&cfg, &p, &v, &other).unwrap()[0].y_hat - base).abs() > 1e-6
            });
            assert!(changed, "{fusion}");
        }
    }

    #[test]
    fn forward_matches_composed_modules() {
        let cfg = micro(Fusion::Agm);
        let p = ModelParams::<Tensor<f64>>::init_with(&cfg, 12, HeadInit::Glorot).unwrap();
        let (v, a) = clip(&cfg, 2, 4, 3, 13);
        let preds = predict(&cfg, &p, &v, &a).unwrap();

        let mut g = Graph::<f64>::inference();
        let pv = p.bind(&mut g);
        let (vv, av) = (g.constant(v), g.constant(a));
        let feats = visual_encode(&mut g, &cfg, &pv.encoder, vv).unwrap();
        let masked = mam::apply_mam(&mut g, feats, cfg.variant, &pv.mam).unwrap();
        let tokens = audio_encode(&mut g, &pv.encoder, av).unwrap();
        let fused = agm::agm_block(&mut g, masked.features, tokens, &pv.agm, &cfg.agm()).unwrap();
        let fused = g.value(fused.fused).clone();
        for (n, pred) in preds.iter().enumerate() {
            let mut logits = [0.0; 2];
            for (k, l) in logits.iter_mut().enumerate() {
                let mut acc = p.head.b.data()[k];
                for j in 0..cfg.d_model {
                    let mean = (0..3).map(|t| fused.at(&[n, t, j])).sum::<f64>() / 3.0;
                    acc += mean * p.head.w.at(&[j, k]);
                }
                *l = acc;
            }
            assert_relative_eq!(pred.logits[0], logits[0], epsilon = 1e-12);
            assert_relative_eq!(pred.logits[1], logits[1], epsilon = 1e-12);
            let softmax = logits[1].exp() / (logits[0].exp() + logits[1].exp());
            assert_relative_eq!(pred.y_hat, softmax, epsilon = 1e-12);
        }
    }

    #[test]
    fn parameter_names_are_unique_and_counted() {
        let cfg = ModelConfig::default();
        let p = ModelParams::<Tensor<f32>>::init(&cfg, 0).unwrap();
        let names: Vec<String> = p.fields().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(names.len(), dedup.len());
        assert!(names.contains(&"mam.spa_w1".to_string()));
        assert!(p.count() > 0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            ModelConfig { frame_size: 30, ..ModelConfig::default() },
            ModelConfig { channels: 6, ..ModelConfig::default() },
            ModelConfig { heads: 5, ..ModelConfig::default() },
        ] {
            assert!(matches!(ModelParams::<Tensor<f32>>::init(&cfg, 0), Err(Error::Config(_))));
        }
    }
}
