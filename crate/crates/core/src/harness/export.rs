use std::fs;
use std::path::Path;

use super::Dataset;
use crate::autograd::Graph;
use crate::data::{load_sample, Sample};
use crate::error::{Error, Result};
use crate::mam::inspect_spatial_mask;
use crate::model::checkpoint;
use crate::model::{visual_encode, ModelConfig, ModelParams};
use crate::tensor::Tensor;

/// Binary greyscale image, `value × 255` rounded half up and clamped.
pub fn mask_to_pgm(mask: &Tensor<f32>) -> Result<Vec<u8>> {
    let [h, w] = match mask.shape() {
        &[h, w] => [h, w],
        s => return Err(Error::Contract(format!("mask must be (H, W), got {s:?}"))),
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(
        mask.data()
            .iter()
            .map(|&v| (v as f64 * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8),
    );
    Ok(out)
}

/// Per-frame spatial masks `(H', W')` for one clip.
pub fn spatial_masks(cfg: &ModelConfig, params: &ModelParams<Tensor<f32>>, sample: &Sample) -> Result<Vec<Tensor<f32>>> {
    let mut g = Graph::<f32>::inference();
    let p = params.map(|_, t| g.constant(t.clone()));
    let mut shape = vec![1];
    shape.extend_from_slice(sample.video.shape());
    let x = g.constant(sample.video.clone().reshape(&shape)?);
    let v = visual_encode(&mut g, cfg, &p.encoder, x)?;
    let ws = inspect_spatial_mask(&mut g, v, cfg.variant, &p.mam)?;
    let m = g.value(ws);
    let (t, h, w) = (m.shape()[1], m.shape()[3], m.shape()[4]);
    (0..t)
        .map(|i| Tensor::new(vec![h, w], m.data()[i * h * w..(i + 1) * h * w].to_vec()))
        .collect()
}

/// Writes `frame_000.pgm ...` for each frame of `clip_id` and returns the masks.
pub fn export_mask(ckpt_dir: &Path, data: &Dataset, clip_id: &str, out: &Path) -> Result<Vec<Tensor<f32>>> {
    let ckpt = checkpoint::load(ckpt_dir)?;
    let record = data
        .manifest
        .find(clip_id)
        .ok_or_else(|| Error::Contract(format!("clip `{clip_id}` is not in the manifest")))?;
    let sample = load_sample(&data.root, record)?;
    let masks = spatial_masks(&ckpt.config, &ckpt.params, &sample)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (t, m) in masks.iter().enumerate() {
        let path = out.join(format!("frame_{t:03}.pgm"));
        fs::write(&path, mask_to_pgm(m)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(masks)
}
