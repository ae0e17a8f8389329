use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{compute_acc, compute_auc};
use super::{batch_tensors, Dataset};
use crate::data::{Method, Sample, Split};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::checkpoint::{self, CheckpointMeta};
use crate::model::{loss, predict, ModelConfig, ModelParams, Prediction};
use crate::tensor::Tensor;

/// Clips per inference batch. Fixed so scores never depend on the mode.
pub const EVAL_BATCH: usize = 8;

/// Scores clips in fixed batches, in parallel across batches when asked.
pub fn score_samples(
    cfg: &ModelConfig,
    params: &ModelParams<Tensor<f32>>,
    samples: &[Sample],
    exec: Exec,
) -> Result<Vec<Prediction>> {
    let batches: Vec<&[Sample]> = samples.chunks(EVAL_BATCH).collect();
    let scored = exec.map(batches, |chunk| {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (v, a) = batch_tensors(&refs)?;
        predict(cfg, params, &v, &a)
    });
    let mut out = Vec::with_capacity(samples.len());
    for preds in scored {
        out.extend(preds?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    /// Absent when the set holds a single class.
    pub auc: Option<f64>,
    pub acc: f64,
    /// Mean cross-entropy.
    pub loss: f64,
}

impl SplitMetrics {
    pub fn from_predictions(preds: &[Prediction], samples: &[Sample]) -> Result<Self> {
        let scores: Vec<f64> = preds.iter().map(|p| p.y_hat).collect();
        let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
        let mut total = 0.0;
        for (p, &y) in preds.iter().zip(&labels) {
            total += loss(p, y as usize)?;
        }
        Ok(SplitMetrics {
            auc: optional_auc(&scores, &labels)?,
            acc: compute_acc(&scores, &labels, 0.5)?,
            loss: total / preds.len() as f64,
        })
    }
}

fn optional_auc(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    match compute_auc(scores, labels) {
        Ok(a) => Ok(Some(a)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub n: usize,
    pub acc: f64,
    pub mean_score: f64,
    /// This method's clips against the split's real clips; absent for the
    /// real group itself.
    pub auc_vs_real: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipScore {
    pub id: String,
    pub method: Method,
    pub label: u8,
    pub y_hat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub n_samples: usize,
    pub auc: Option<f64>,
    pub acc: f64,
    pub loss: f64,
    /// Seed the checkpoint was trained with.
    pub seed: u64,
    pub manifest_seed: Option<u64>,
    pub checkpoint: CheckpointMeta,
    pub config: ModelConfig,
    pub per_method: BTreeMap<String, MethodReport>,
    pub scores: Vec<ClipScore>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Scores a split with in-memory parameters.
pub fn evaluate_params(
    cfg: &ModelConfig,
    params: &ModelParams<Tensor<f32>>,
    meta: &CheckpointMeta,
    data: &Dataset,
    split: Split,
    exec: Exec,
) -> Result<EvalReport> {
    let samples = data.samples(split, exec)?;
    if samples.is_empty() {
        return Err(Error::Contract(format!("split `{split}` has no clips")));
    }
    let preds = score_samples(cfg, params, &samples, exec)?;
    let overall = SplitMetrics::from_predictions(&preds, &samples)?;
    let scores: Vec<ClipScore> = samples
        .iter()
        .zip(&preds)
        .map(|(s, p)| ClipScore {
            id: s.id.clone(),
            method: s.method,
            label: s.label,
            y_hat: p.y_hat,
        })
        .collect();

    let real: Vec<f64> = scores.iter().filter(|c| c.method == Method::Real).map(|c| c.y_hat).collect();
    let mut per_method = BTreeMap::new();
    for method in [Method::Real, Method::Jitter, Method::Decorr] {
        let group: Vec<&ClipScore> = scores.iter().filter(|c| c.method == method).collect();
        if group.is_empty() {
            continue;
        }
        let ys: Vec<f64> = group.iter().map(|c| c.y_hat).collect();
        let ls: Vec<u8> = group.iter().map(|c| c.label).collect();
        let auc_vs_real = if method == Method::Real || real.is_empty() {
            None
        } else {
            let mut s = real.clone();
            s.extend(&ys);
            let mut l = vec![0u8; real.len()];
            l.extend(&ls);
            optional_auc(&s, &l)?
        };
        per_method.insert(
            method.to_string(),
            MethodReport {
                n: group.len(),
                acc: compute_acc(&ys, &ls, 0.5)?,
                mean_score: ys.iter().sum::<f64>() / ys.len() as f64,
                auc_vs_real,
            },
        );
    }
    Ok(EvalReport {
        split,
        n_samples: samples.len(),
        auc: overall.auc,
        acc: overall.acc,
        loss: overall.loss,
        seed: meta.seed,
        manifest_seed: data.manifest.header.as_ref().map(|h| h.seed),
        checkpoint: meta.clone(),
        config: *cfg,
        per_method,
        scores,
    })
}

/// Loads a checkpoint directory and scores one split of a manifest.
pub fn evaluate(ckpt_dir: &Path, manifest: &Path, split: Split, exec: Exec) -> Result<EvalReport> {
    let ckpt = checkpoint::load(ckpt_dir)?;
    let data = Dataset::open(manifest)?;
    evaluate_params(&ckpt.config, &ckpt.params, &ckpt.meta, &data, split, exec)
}
