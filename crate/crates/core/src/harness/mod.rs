//! Optimizer, metrics, training and evaluation loops, ablations and mask
//! export.

pub mod ablation;
pub mod adam;
pub mod eval;
pub mod export;
pub mod metrics;
pub mod train;

use std::path::{Path, PathBuf};

pub use ablation::{run_ablation, AblationConfig, AblationRow, AblationTable};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use eval::{evaluate, evaluate_params, EvalReport};
pub use export::{export_mask, mask_to_pgm};
pub use metrics::{compute_acc, compute_auc};
pub use train::{train, TrainConfig, TrainOutcome};

use crate::data::{load_sample, Manifest, Sample, Split};
use crate::error::{Error, Result};
use crate::exec::Exec;

/// A manifest plus the directory its media paths are relative to.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub root: PathBuf,
    pub path: PathBuf,
}

impl Dataset {
    pub fn open(path: &Path) -> Result<Self> {
        let manifest = Manifest::load(path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Dataset {
            manifest,
            root,
            path: path.to_path_buf(),
        })
    }

    pub fn samples(&self, split: Split, exec: Exec) -> Result<Vec<Sample>> {
        let records: Vec<_> = self.manifest.split(split).into_iter().cloned().collect();
        exec.map(records, |r| load_sample(&self.root, &r)).into_iter().collect()
    }
}

/// Stacks clips into `(N, T, C, H, W)` frames and `(N, T_a, d)` audio.
pub fn batch_tensors(samples: &[&Sample]) -> Result<(crate::Tensor<f32>, crate::Tensor<f32>)> {
    if samples.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let videos: Vec<_> = samples.iter().map(|s| &s.video).collect();
    let audios: Vec<_> = samples.iter().map(|s| &s.audio).collect();
    let v = crate::Tensor::stack(&videos)?;
    let a = crate::Tensor::stack(&audios)?;
    Ok((v, a))
}
