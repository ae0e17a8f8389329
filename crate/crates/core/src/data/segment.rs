use crate::error::{Error, Result};

pub const CLIP_LEN_S: f64 = 5.0;

/// Cuts `[0, duration_s]` into consecutive clips of `clip_len_s`; a shorter
/// tail is merged into the preceding clip, and an input shorter than one
/// clip comes back whole.
pub fn segment_clips(duration_s: f64, clip_len_s: f64) -> Result<Vec<(f64, f64)>> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::Contract(format!("duration must be positive, got {duration_s}")));
    }
    if !(clip_len_s.is_finite() && clip_len_s > 0.0) {
        return Err(Error::Contract(format!("clip length must be positive, got {clip_len_s}")));
    }
    let whole = (duration_s / clip_len_s).floor() as usize;
    if whole <= 1 {
        return Ok(vec![(0.0, duration_s)]);
    }
    let mut out: Vec<(f64, f64)> = (0..whole - 1)
        .map(|k| (k as f64 * clip_len_s, (k + 1) as f64 * clip_len_s))
        .collect();
    out.push(((whole - 1) as f64 * clip_len_s, duration_s));
    Ok(out)
}
