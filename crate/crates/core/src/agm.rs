//! Audio-guided module: visual tokens attend to themselves over time, then
//! speaker-audio tokens query them through single-head cross-attention,
//! followed by a feed-forward layer. Residuals and post-layer-norm around
//! each stage.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::param_struct;
use crate::rng::{derive_str, SeedRng};
use crate::tensor::{Real, Tensor};

/// Per-frame visual tokens, `(N, T, d_v)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VisualTokenSeq(pub Var);

/// Speaker-audio tokens, `(N, T_a, d_a)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AudioTokenSeq(pub Var);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgmConfig {
    /// Channels of the incoming motion-weighted features.
    pub channels: usize,
    pub audio_dim: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub pos_enc: bool,
    pub ln_eps: f64,
}

impl Default for AgmConfig {
    fn default() -> Self {
        AgmConfig {
            channels: 16,
            audio_dim: 32,
            d_model: 64,
            heads: 4,
            ffn_hidden: 256,
            pos_enc: true,
            ln_eps: 1e-5,
        }
    }
}

impl AgmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model width {} not divisible by head count {}",
                self.d_model, self.heads
            )));
        }
        if self.channels == 0 || self.audio_dim == 0 || self.ffn_hidden == 0 {
            return Err(Error::Config("AGM widths must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

param_struct! {
    /// Linear weights are `[in, out]`.
    pub struct AgmParams {
        tok_w,
        tok_b,
        sa_wq,
        sa_wk,
        sa_wv,
        sa_wo,
        ln1_g,
        ln1_b,
        ca_wq,
        ca_wk,
        ca_wv,
        ln2_g,
        ln2_b,
        ffn_w1,
        ffn_b1,
        ffn_w2,
        ffn_b2,
        ln3_g,
        ln3_b,
    }
}

impl<F: Real> AgmParams<Tensor<F>> {
    pub fn init(cfg: &AgmConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (c, da, d, hid) = (cfg.channels, cfg.audio_dim, cfg.d_model, cfg.ffn_hidden);
        let w = |name: &str, fan_in: usize, fan_out: usize| {
            SeedRng::new(derive_str(seed, name)).glorot::<F>(&[fan_in, fan_out], fan_in, fan_out)
        };
        Ok(AgmParams {
            tok_w: w("agm.tok_w", c, d),
            tok_b: Tensor::zeros(&[d]),
            sa_wq: w("agm.sa_wq", d, d),
            sa_wk: w("agm.sa_wk", d, d),
            sa_wv: w("agm.sa_wv", d, d),
            sa_wo: w("agm.sa_wo", d, d),
            ln1_g: Tensor::ones(&[d]),
            ln1_b: Tensor::zeros(&[d]),
            ca_wq: w("agm.ca_wq", da, d),
            ca_wk: w("agm.ca_wk", d, d),
            ca_wv: w("agm.ca_wv", d, d),
            ln2_g: Tensor::ones(&[d]),
            ln2_b: Tensor::zeros(&[d]),
            ffn_w1: w("agm.ffn_w1", d, hid),
            ffn_b1: Tensor::zeros(&[hid]),
            ffn_w2: w("agm.ffn_w2", hid, d),
            ffn_b2: Tensor::zeros(&[d]),
            ln3_g: Tensor::ones(&[d]),
            ln3_b: Tensor::zeros(&[d]),
        })
    }
}

/// Sinusoidal encoding at (possibly fractional) positions, `[positions, dim]`.
pub fn positional_encoding<F: Real>(positions: &[f64], dim: usize) -> Tensor<F> {
    Tensor::from_fn(&[positions.len(), dim], |i| {
        let (p, j) = (positions[i / dim], i % dim);
        let freq = 10000f64.powf(-((j / 2 * 2) as f64) / dim as f64);
        F::lit(if j % 2 == 0 { (p * freq).sin() } else { (p * freq).cos() })
    })
}

fn dims3<F: Real>(g: &Graph<F>, v: Var, what: &str) -> Result<[usize; 3]> {
    let s = g.shape(v);
    if s.len() != 3 {
        return Err(Error::Contract(format!("{what} tokens must be (N, T, d), got {s:?}")));
    }
    Ok([s[0], s[1], s[2]])
}

/// Adds a `[T, d]` encoding to every batch element of `(N, T, d)` tokens.
fn add_encoding<F: Real>(g: &mut Graph<F>, x: Var, pe: Tensor<F>) -> Result<Var> {
    let [t, d] = [pe.shape()[0], pe.shape()[1]];
    let pe = g.constant(pe.reshape(&[1, t, d])?);
    g.add_bcast(x, pe)
}

/// Spatial mean-pool per frame, linear projection, optional encoding.
pub fn tokenize_visual<F: Real>(
    g: &mut Graph<F>,
    v_dd: Var,
    p: &AgmParams<Var>,
    cfg: &AgmConfig,
) -> Result<VisualTokenSeq> {
    let s = g.shape(v_dd).to_vec();
    if s.len() != 5 {
        return Err(Error::Contract(format!("expected (N,T,C,H,W) features, got {s:?}")));
    }
    let pooled = g.reduce_mean(v_dd, &[3, 4])?;
    let mut tok = g.linear(pooled, p.tok_w, Some(p.tok_b))?;
    if cfg.pos_enc {
        let positions: Vec<f64> = (0..s[1]).map(|t| t as f64).collect();
        tok = add_encoding(g, tok, positional_encoding(&positions, g.shape(tok)[2]))?;
    }
    Ok(VisualTokenSeq(tok))
}

/// Adds the encoding to audio tokens at positions rescaled onto the frame
/// timeline, so query `i` of `T_a` sits at frame time `i * T / T_a`.
pub fn encode_audio<F: Real>(
    g: &mut Graph<F>,
    a: AudioTokenSeq,
    frames: usize,
    cfg: &AgmConfig,
) -> Result<AudioTokenSeq> {
    if !cfg.pos_enc {
        return Ok(a);
    }
    let [_, ta, da] = dims3(g, a.0, "audio")?;
    let positions: Vec<f64> = (0..ta).map(|i| i as f64 * frames as f64 / ta as f64).collect();
    Ok(AudioTokenSeq(add_encoding(g, a.0, positional_encoding(&positions, da))?))
}

/// Splits `(N, T, h*dh)` into `(N*h, T, dh)`.
fn split_heads<F: Real>(g: &mut Graph<F>, x: Var, heads: usize) -> Result<Var> {
    let [n, t, d] = dims3(g, x, "projected")?;
    let x = g.reshape(x, &[n, t, heads, d / heads])?;
    let x = g.permute(x, &[0, 2, 1, 3])?;
    g.reshape(x, &[n * heads, t, d / heads])
}

fn merge_heads<F: Real>(g: &mut Graph<F>, x: Var, n: usize, heads: usize) -> Result<Var> {
    let [_, t, dh] = dims3(g, x, "head")?;
    let x = g.reshape(x, &[n, heads, t, dh])?;
    let x = g.permute(x, &[0, 2, 1, 3])?;
    g.reshape(x, &[n, t, heads * dh])
}

/// Multi-head self-attention over time, residual, layer-norm.
pub fn temporal_self_attention<F: Real>(
    g: &mut Graph<F>,
    v: VisualTokenSeq,
    p: &AgmParams<Var>,
    cfg: &AgmConfig,
) -> Result<VisualTokenSeq> {
    let [n, _, _] = dims3(g, v.0, "visual")?;
    let h = cfg.heads;
    let q = g.linear(v.0, p.sa_wq, None)?;
    let k = g.linear(v.0, p.sa_wk, None)?;
    let val = g.linear(v.0, p.sa_wv, None)?;
    let (q, k, val) = (split_heads(g, q, h)?, split_heads(g, k, h)?, split_heads(g, val, h)?);
    let scores = g.bmm(q, k, true)?;
    let scores = g.scale(scores, 1.0 / (cfg.head_dim() as f64).sqrt());
    let att = g.softmax(scores, 2)?;
    let ctx = g.bmm(att, val, false)?;
    let ctx = merge_heads(g, ctx, n, h)?;
    let out = g.linear(ctx, p.sa_wo, None)?;
    let res = g.add(v.0, out)?;
    Ok(VisualTokenSeq(g.layer_norm(res, p.ln1_g, p.ln1_b, cfg.ln_eps)?))
}

/// Audio-as-query cross-attention.
#[derive(Clone, Copy, Debug)]
pub struct CrossAttention {
    /// `(N, T_a, d)`.
    pub output: Var,
    /// `(N, T_a, T)`; each row sums to one.
    pub attention: Var,
    /// The projected query stream `A·W^Q`, `(N, T_a, d)`.
    pub query: Var,
}

pub fn cross_modal_interact<F: Real>(
    g: &mut Graph<F>,
    v3: VisualTokenSeq,
    a: AudioTokenSeq,
    p: &AgmParams<Var>,
) -> Result<CrossAttention> {
    let [nv, _, _] = dims3(g, v3.0, "visual")?;
    let [na, _, _] = dims3(g, a.0, "audio")?;
    if nv != na {
        return Err(Error::Contract(format!(
            "batch mismatch: {nv} visual sequences, {na} audio sequences"
        )));
    }
    let q = g.linear(a.0, p.ca_wq, None)?;
    let k = g.linear(v3.0, p.ca_wk, None)?;
    let val = g.linear(v3.0, p.ca_wv, None)?;
    let d = g.shape(q)[2];
    let scores = g.bmm(q, k, true)?;
    let scores = g.scale(scores, 1.0 / (d as f64).sqrt());
    let attention = g.softmax(scores, 2)?;
    let output = g.bmm(attention, val, false)?;
    Ok(CrossAttention {
        output,
        attention,
        query: q,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct AgmOutput {
    /// Fused tokens, `(N, T_a, d)`.
    pub fused: Var,
    pub attention: Var,
}

/// Tokenize, self-attend, cross-attend with query residual, feed-forward.
pub fn agm_block<F: Real>(
    g: &mut Graph<F>,
    v_dd: Var,
    a: AudioTokenSeq,
    p: &AgmParams<Var>,
    cfg: &AgmConfig,
) -> Result<AgmOutput> {
    let tokens = tokenize_visual(g, v_dd, p, cfg)?;
    let frames = g.shape(v_dd)[1];
    let v3 = temporal_self_attention(g, tokens, p, cfg)?;
    let a = encode_audio(g, a, frames, cfg)?;
    let ca = cross_modal_interact(g, v3, a, p)?;
    let res = g.add(ca.query, ca.output)?;
    let x = g.layer_norm(res, p.ln2_g, p.ln2_b, cfg.ln_eps)?;
    let hid = g.linear(x, p.ffn_w1, Some(p.ffn_b1))?;
    let hid = g.relu(hid);
    let ff = g.linear(hid, p.ffn_w2, Some(p.ffn_b2))?;
    let res = g.add(x, ff)?;
    let fused = g.layer_norm(res, p.ln3_g, p.ln3_b, cfg.ln_eps)?;
    Ok(AgmOutput {
        fused,
        attention: ca.attention,
    })
}
