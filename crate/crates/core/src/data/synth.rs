//! Seeded synthetic listener clips.
//!
//! The speaker audio carries salience events. A genuine listener reacts to
//! each event a fixed latency later with a smooth four-frame nod or smile.
//! Jitter fakes keep the reactions but collapse each into a one-frame
//! discontinuity; decorrelation fakes get their own smooth reactions, with
//! count and timing drawn independently of the audio.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use crate::autograd::Graph;
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::{derive_str, SeedRng};
use crate::tensor::{io, Tensor};

use super::manifest::{ClipManifestRecord, Manifest, ManifestHeader, Method, Split, SynthStats};

/// Notional frame rate of synthetic clips.
pub const FPS: f64 = 8.0;
/// Frames spanned by one smooth reaction.
pub const REACTION_FRAMES: usize = 4;
const SPACING: usize = REACTION_FRAMES + 1;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub frames: usize,
    pub frame_size: usize,
    pub audio_steps: usize,
    pub audio_dim: usize,
    pub event_rate: f64,
    pub latency: usize,
    /// Share of fakes that are jitter fakes; the rest are decorrelation fakes.
    pub jitter_fraction: f64,
    pub noise: f64,
    pub audio_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            train: 64,
            val: 16,
            test: 64,
            frames: 16,
            frame_size: 32,
            audio_steps: 24,
            audio_dim: 8,
            event_rate: 2.0,
            latency: 2,
            jitter_fraction: 0.5,
            noise: 0.01,
            audio_noise: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn from_kv(mut kv: KeyValues) -> Result<Self> {
        let d = SynthConfig::default();
        let cfg = SynthConfig {
            seed: kv.take_or("seed", d.seed)?,
            train: kv.take_or("train", d.train)?,
            val: kv.take_or("val", d.val)?,
            test: kv.take_or("test", d.test)?,
            frames: kv.take_or("frames", d.frames)?,
            frame_size: kv.take_or("frame_size", d.frame_size)?,
            audio_steps: kv.take_or("audio_steps", d.audio_steps)?,
            audio_dim: kv.take_or("audio_dim", d.audio_dim)?,
            event_rate: kv.take_or("event_rate", d.event_rate)?,
            latency: kv.take_or("latency", d.latency)?,
            jitter_fraction: kv.take_or("jitter_fraction", d.jitter_fraction)?,
            noise: kv.take_or("noise", d.noise)?,
            audio_noise: kv.take_or("audio_noise", d.audio_noise)?,
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.train == 0 || self.val == 0 || self.test == 0 {
            return bad("every split needs at least one clip".into());
        }
        if !(0.0..=1.0).contains(&self.jitter_fraction) {
            return bad(format!("jitter_fraction {} outside [0, 1]", self.jitter_fraction));
        }
        if !(self.event_rate.is_finite() && self.event_rate > 0.0) {
            return bad(format!("event_rate {} must be positive", self.event_rate));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad(format!("noise {} must be non-negative", self.noise));
        }
        if !(self.audio_noise.is_finite() && self.audio_noise >= 0.0) {
            return bad(format!("audio_noise {} must be non-negative", self.audio_noise));
        }
        if self.frame_size < 8 || !self.frame_size.is_multiple_of(4) {
            return bad(format!("frame_size {} must be a multiple of 4, at least 8", self.frame_size));
        }
        if self.audio_steps < 3 || self.audio_dim == 0 {
            return bad("need at least 3 audio steps and one audio feature".into());
        }
        if self.earliest_event().is_none() {
            return bad(format!(
                "{} frames cannot hold a {REACTION_FRAMES}-frame reaction after latency {}",
                self.frames, self.latency
            ));
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.frames as f64 / FPS
    }

    fn event_frame(&self, token: usize) -> usize {
        token * self.frames / self.audio_steps
    }

    /// Audio tokens whose event leaves room for a full reaction.
    fn valid_event_tokens(&self) -> Vec<usize> {
        (1..self.audio_steps - 1)
            .filter(|&e| self.event_frame(e) + self.latency + REACTION_FRAMES <= self.frames)
            .collect()
    }

    fn earliest_event(&self) -> Option<usize> {
        self.valid_event_tokens().first().copied()
    }

    /// Most reactions that fit without overlapping.
    pub fn max_events(&self) -> usize {
        let starts: Vec<usize> = self
            .valid_event_tokens()
            .iter()
            .map(|&e| self.event_frame(e) + self.latency)
            .collect();
        match (starts.first(), starts.last()) {
            (Some(a), Some(b)) => 1 + (b - a) / SPACING,
            _ => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReactionKind {
    Nod,
    Smile,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub token: usize,
    pub frame: usize,
    pub amplitude: f64,
    pub kind: ReactionKind,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reaction {
    pub start: usize,
    pub amplitude: f64,
    pub kind: ReactionKind,
    pub smooth: bool,
}

impl Reaction {
    /// Displacement profile at frame offset `k` from the start.
    pub fn profile(&self, k: isize) -> f64 {
        if !(0..REACTION_FRAMES as isize).contains(&k) {
            return 0.0;
        }
        if self.smooth {
            (PI * (k + 1) as f64 / (REACTION_FRAMES + 1) as f64).sin().powi(2)
        } else if k == 1 {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthClip {
    /// `(T, 3, H, W)` in [0, 1].
    pub video: Tensor<f32>,
    /// `(T_a, d_raw)`.
    pub audio: Tensor<f32>,
    pub events: Vec<Event>,
    pub reactions: Vec<Reaction>,
}

#[derive(Clone, Copy, Debug)]
struct Appearance {
    cx: f64,
    cy: f64,
    sigma: f64,
    skin: [f64; 3],
    background: [f64; 3],
    eye_dark: f64,
    mouth: [f64; 3],
}

impl Appearance {
    /// The one static face every clip shares, so clips differ only in
    /// their reactions and noise.
    fn template(frame_size: usize) -> Self {
        let scale = frame_size as f64 / 32.0;
        let centre = frame_size as f64 / 2.0;
        Appearance {
            cx: centre,
            cy: centre - scale,
            sigma: 5.25 * scale,
            skin: [0.7, 0.57, 0.47],
            background: [0.2, 0.2, 0.2],
            eye_dark: 0.3,
            mouth: [0.2, 0.05, 0.05],
        }
    }
}

/// Picks `count` slots from `candidates` (ascending) whose mapped starts are
/// at least `SPACING` apart, retrying a bounded number of times and
/// shrinking the count if the draw keeps failing.
fn spaced_draw(rng: &mut SeedRng, candidates: &[usize], start_of: impl Fn(usize) -> usize, count: usize) -> Vec<usize> {
    let mut want = count.min(candidates.len());
    while want > 0 {
        for _ in 0..64 {
            let mut pick: Vec<usize> = Vec::with_capacity(want);
            let mut pool = candidates.to_vec();
            rng.shuffle(&mut pool);
            for &c in &pool {
                if pick.iter().all(|&p| start_of(p).abs_diff(start_of(c)) >= SPACING) {
                    pick.push(c);
                    if pick.len() == want {
                        break;
                    }
                }
            }
            if pick.len() == want {
                pick.sort_unstable();
                return pick;
            }
        }
        want -= 1;
    }
    Vec::new()
}

/// Poisson count, redrawn while zero, capped at what fits.
fn draw_count(rng: &mut SeedRng, cfg: &SynthConfig) -> usize {
    let mut s = 0;
    for _ in 0..1000 {
        s = rng.poisson(cfg.event_rate);
        if s > 0 {
            break;
        }
    }
    s.clamp(1, cfg.max_events().max(1))
}

/// Direction in audio-feature space along which salience events rise.
fn event_direction(dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|j| if j < dim.div_ceil(2) { 1.0 - 0.5 * j as f64 / dim as f64 } else { 0.0 })
        .collect()
}

/// Draws every random quantity up front, independent of `method`, then
/// renders the clip. Real and jitter clips with one seed share events.
pub fn generate_clip(cfg: &SynthConfig, seed: u64, method: Method) -> SynthClip {
    let mut rng = SeedRng::new(seed);
    let s = draw_count(&mut rng, cfg);
    let tokens = cfg.valid_event_tokens();
    let event_tokens = spaced_draw(&mut rng, &tokens, |e| cfg.event_frame(e), s);
    let events: Vec<Event> = event_tokens
        .iter()
        .map(|&token| Event {
            token,
            frame: cfg.event_frame(token),
            amplitude: rng.uniform(0.6, 1.4),
            kind: if rng.coin(0.5) { ReactionKind::Nod } else { ReactionKind::Smile },
        })
        .collect();
    let free_starts: Vec<usize> = (0..=cfg.frames - REACTION_FRAMES).collect();
    let decorr_count = draw_count(&mut rng, cfg);
    let decorr: Vec<Reaction> = spaced_draw(&mut rng, &free_starts, |x| x, decorr_count)
        .into_iter()
        .map(|start| Reaction {
            start,
            amplitude: rng.uniform(0.6, 1.4),
            kind: if rng.coin(0.5) { ReactionKind::Nod } else { ReactionKind::Smile },
            smooth: true,
        })
        .collect();

    let app = Appearance::template(cfg.frame_size);

    let (ta, da) = (cfg.audio_steps, cfg.audio_dim);
    let raw_noise: Vec<f64> = (0..ta * da).map(|_| rng.normal(cfg.audio_noise)).collect();
    let (t, fs) = (cfg.frames, cfg.frame_size);
    let pixel_noise: Vec<f64> = (0..t * 3 * fs * fs).map(|_| rng.normal(cfg.noise)).collect();

    let dir = event_direction(da);
    let audio = Tensor::from_fn(&[ta, da], |i| {
        let (step, j) = (i / da, i % da);
        let lo = step.saturating_sub(1);
        let hi = (step + 1).min(ta - 1);
        let smooth = (lo..=hi).map(|s| raw_noise[s * da + j]).sum::<f64>() / (hi - lo + 1) as f64;
        let bump: f64 = events
            .iter()
            .map(|e| {
                let bump = match step as isize - e.token as isize {
                    0 => 1.0,
                    -1 | 1 => 0.5,
                    _ => 0.0,
                };
                1.5 * e.amplitude * bump
            })
            .sum();
        (smooth + bump * dir[j]) as f32
    });

    let reactions: Vec<Reaction> = match method {
        Method::Real | Method::Jitter => events
            .iter()
            .map(|e| Reaction {
                start: e.frame + cfg.latency,
                amplitude: e.amplitude,
                kind: e.kind,
                smooth: method == Method::Real,
            })
            .collect(),
        Method::Decorr => decorr,
    };

    let video = render(cfg, &app, &reactions, &pixel_noise);
    SynthClip {
        video,
        audio,
        events,
        reactions,
    }
}

fn render(cfg: &SynthConfig, app: &Appearance, reactions: &[Reaction], noise: &[f64]) -> Tensor<f32> {
    let (t_len, fs) = (cfg.frames, cfg.frame_size);
    let scale = fs as f64 / 32.0;
    let gauss = |dx: f64, dy: f64, sx: f64, sy: f64| (-(dx * dx) / (2.0 * sx * sx) - (dy * dy) / (2.0 * sy * sy)).exp();
    let mut out = vec![0f32; t_len * 3 * fs * fs];
    for t in 0..t_len {
        let drive = |kind: ReactionKind| -> f64 {
            reactions
                .iter()
                .filter(|r| r.kind == kind)
                .map(|r| r.amplitude * r.profile(t as isize - r.start as isize))
                .sum()
        };
        let nod = 2.0 * scale * drive(ReactionKind::Nod);
        let smile = drive(ReactionKind::Smile);
        let cx = app.cx;
        let cy = app.cy + nod;
        let s = app.sigma;
        for y in 0..fs {
            for x in 0..fs {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let head = gauss(px - cx, py - cy, s, 1.15 * s);
                let eyes = gauss(px - (cx - 0.4 * s), py - (cy - 0.3 * s), 0.15 * s, 0.12 * s)
                    + gauss(px - (cx + 0.4 * s), py - (cy - 0.3 * s), 0.15 * s, 0.12 * s);
                let mouth = gauss(px - cx, py - (cy + 0.5 * s), 0.35 * s, 0.1 * s);
                let lower = head / (1.0 + (-(py - cy) / (0.15 * s)).exp());
                for c in 0..3 {
                    let mut v = app.background[c] + (app.skin[c] - app.background[c]) * head;
                    v -= app.eye_dark * eyes;
                    v -= app.mouth[c] * mouth;
                    v += 0.3 * smile * lower;
                    let idx = ((t * 3 + c) * fs + y) * fs + x;
                    out[idx] = (v + noise[idx]).clamp(0.0, 1.0) as f32;
                }
            }
        }
    }
    Tensor::new(vec![t_len, 3, fs, fs], out).expect("consistent extents")
}

/// Σ‖ℳ‖² of a clip's raw frames `(T, C, H, W)`.
pub fn motion_energy(video: &Tensor<f32>) -> Result<f64> {
    let mut shape = vec![1];
    shape.extend_from_slice(video.shape());
    let mut g = Graph::<f32>::inference();
    let v = g.constant(video.clone().reshape(&shape)?);
    let m = g.temporal_diff(v)?;
    Ok(g.value(m).sq_norm_f64())
}

/// Reactions whose onset trails the latest preceding event by exactly
/// `latency` frames.
pub fn lag_matches(clip: &SynthClip, latency: usize) -> usize {
    clip.reactions
        .iter()
        .filter(|r| {
            clip.events
                .iter()
                .filter(|e| e.frame <= r.start)
                .map(|e| r.start - e.frame)
                .min()
                == Some(latency)
        })
        .count()
}

struct ClipSpec {
    id: String,
    split: Split,
    method: Method,
}

fn plan(cfg: &SynthConfig) -> Vec<ClipSpec> {
    let mut specs = Vec::new();
    for (split, count) in [(Split::Train, cfg.train), (Split::Val, cfg.val), (Split::Test, cfg.test)] {
        for i in 0..count {
            let method = if i % 2 == 0 {
                Method::Real
            } else {
                let k = (i / 2) as f64;
                if ((k + 1.0) * cfg.jitter_fraction).floor() > (k * cfg.jitter_fraction).floor() {
                    Method::Jitter
                } else {
                    Method::Decorr
                }
            };
            specs.push(ClipSpec {
                id: format!("{split}-{i:04}"),
                split,
                method,
            });
        }
    }
    specs
}

pub fn clip_seed(master: u64, id: &str) -> u64 {
    derive_str(master, id)
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Writes media under `out/media/` and `out/manifest.jsonl`; returns the
/// manifest.
pub fn synth_generate(cfg: &SynthConfig, out: &Path, exec: Exec) -> Result<Manifest> {
    cfg.validate()?;
    let media = out.join("media");
    fs::create_dir_all(&media).map_err(|e| Error::io(&media, e))?;
    let results = exec.map(plan(cfg), |spec| -> Result<(ClipManifestRecord, f64, usize, usize)> {
        let clip = generate_clip(cfg, clip_seed(cfg.seed, &spec.id), spec.method);
        let video_path = format!("media/{}.video.mtns", spec.id);
        let audio_path = format!("media/{}.audio.mtns", spec.id);
        io::save(&clip.video, &out.join(&video_path))?;
        io::save(&clip.audio, &out.join(&audio_path))?;
        let energy = motion_energy(&clip.video)?;
        let matched = lag_matches(&clip, cfg.latency);
        Ok((
            ClipManifestRecord {
                id: spec.id,
                video_path,
                audio_path,
                label: spec.method.label(),
                method: spec.method,
                duration_s: cfg.duration_s(),
                split: spec.split,
            },
            energy,
            matched,
            clip.reactions.len(),
        ))
    });
    let mut records = Vec::new();
    let mut acc: BTreeMap<String, (usize, f64, usize, usize)> = BTreeMap::new();
    for r in results {
        let (record, energy, matched, total) = r?;
        let e = acc.entry(record.method.to_string()).or_default();
        e.0 += 1;
        e.1 += energy;
        e.2 += matched;
        e.3 += total;
        records.push(record);
    }
    let mut stats = SynthStats::default();
    for (method, (n, energy, matched, total)) in acc {
        stats.clips.insert(method.clone(), n);
        stats.mean_motion_energy.insert(method.clone(), energy / n as f64);
        stats.lag_match_rate.insert(method, matched as f64 / total.max(1) as f64);
    }
    let mut header = ManifestHeader::new(cfg.seed);
    header.stats = Some(stats);
    let manifest = Manifest {
        header: Some(header),
        records,
    };
    manifest.save(&out.join(MANIFEST_FILE))?;
    Ok(manifest)
}
