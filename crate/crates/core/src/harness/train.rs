use std::fs;
use std::path::Path;

use serde::Serialize;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::eval::{score_samples, SplitMetrics};
use super::{batch_tensors, Dataset};
use crate::autograd::Graph;
use crate::config::KeyValues;
use crate::data::{Sample, Split};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::checkpoint::{self, Checkpoint, CheckpointMeta};
use crate::model::{forward_graph, loss, ModelConfig, ModelParams, Prediction};
use crate::rng::{derive_str, SeedRng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Input widths are taken from the data at train time.
    pub model: ModelConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// How evaluation passes score clips; training steps are always sequential.
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            adam: AdamConfig::default(),
            batch_size: 8,
            epochs: 200,
            seed: 0,
            exec: Exec::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut kv = KeyValues::load(path)?;
        let cfg = Self::take_from(&mut kv)?;
        kv.finish()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let cfg = Self::take_from(&mut kv)?;
        kv.finish()?;
        Ok(cfg)
    }

    /// Consumes the training keys, leaving any others for the caller.
    pub fn take_from(kv: &mut KeyValues) -> Result<Self> {
        let d = TrainConfig::default();
        let m = d.model;
        let model = ModelConfig {
            channels: kv.take_or("channels", m.channels)?,
            audio_dim: kv.take_or("audio_dim", m.audio_dim)?,
            reduction: kv.take_or("reduction", m.reduction)?,
            bottleneck_reduction: kv.take_or("bottleneck_reduction", m.bottleneck_reduction)?,
            spa_hidden: kv.take_or("spa_hidden", m.spa_hidden)?,
            spa_kernel: kv.take_or("spa_kernel", m.spa_kernel)?,
            d_model: kv.take_or("d_model", m.d_model)?,
            heads: kv.take_or("heads", m.heads)?,
            ffn_hidden: kv.take_or("ffn_hidden", m.ffn_hidden)?,
            pos_enc: kv.take_or("pos_enc", m.pos_enc)?,
            variant: kv.take_or("variant", m.variant)?,
            fusion: kv.take_or("fusion", m.fusion)?,
            ..m
        };
        let cfg = TrainConfig {
            model,
            adam: AdamConfig {
                lr: kv.take_or("lr", d.adam.lr)?,
                beta1: kv.take_or("beta1", d.adam.beta1)?,
                beta2: kv.take_or("beta2", d.adam.beta2)?,
                eps: kv.take_or("eps", d.adam.eps)?,
            },
            batch_size: kv.take_or("batch_size", d.batch_size)?,
            epochs: kv.take_or("epochs", d.epochs)?,
            seed: kv.take_or("seed", d.seed)?,
            exec: kv.take_or("exec", d.exec)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.check(false)
    }

    /// `lr = 0` is allowed here as a frozen run; configuration files still
    /// require a positive rate.
    fn check(&self, allow_frozen: bool) -> Result<()> {
        let a = &self.adam;
        let lr_ok = a.lr > 0.0 || (allow_frozen && a.lr == 0.0);
        if !lr_ok || !a.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", a.lr)));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps.is_nan() || a.eps <= 0.0 {
            return Err(Error::Config("Adam betas must lie in [0, 1) and eps be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        self.model.validate()
    }
}

/// Per-line records of `train_log.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogRecord {
    Start {
        seed: u64,
        n_train: usize,
        n_val: usize,
        n_params: usize,
        initial_loss: f64,
    },
    Epoch {
        epoch: usize,
        train_loss: f64,
        train_acc: f64,
        val_auc: Option<f64>,
        val_acc: Option<f64>,
        val_loss: Option<f64>,
    },
    End {
        best_epoch: usize,
        best_val_auc: Option<f64>,
        final_train: SplitMetrics,
    },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: Vec<LogRecord>,
    /// Train-split metrics of the final parameters.
    pub final_train: SplitMetrics,
}

impl TrainOutcome {
    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|r| serde_json::to_string(r).expect("log record serializes") + "\n")
            .collect()
    }

    /// Writes `best/`, `final/` and `train_log.jsonl` under `out`.
    pub fn save(&self, out: &Path) -> Result<()> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        checkpoint::save(&out.join("best"), &self.best)?;
        checkpoint::save(&out.join("final"), &self.last)?;
        let path = out.join("train_log.jsonl");
        fs::write(&path, self.log_jsonl()).map_err(|e| Error::io(&path, e))
    }
}

/// Copies input widths from the first clip and checks every clip agrees.
fn fit_model(base: &ModelConfig, samples: &[Sample]) -> Result<ModelConfig> {
    let first = &samples[0];
    let (vs, aus) = (first.video.shape(), first.audio.shape());
    if vs.len() != 4 || vs[2] != vs[3] || aus.len() != 2 {
        return Err(Error::Contract(format!(
            "clip {} has frames {vs:?} and audio {aus:?}; expected (T, C, S, S) and (T_a, d)",
            first.id
        )));
    }
    for s in samples {
        if s.video.shape() != vs || s.audio.shape() != aus {
            return Err(Error::Contract(format!("clip {} differs in shape from clip {}", s.id, first.id)));
        }
    }
    let cfg = ModelConfig {
        in_channels: vs[1],
        frame_size: vs[2],
        audio_raw_dim: aus[1],
        ..*base
    };
    cfg.validate()?;
    Ok(cfg)
}

struct Step {
    loss_sum: f64,
    preds: Vec<Prediction>,
}

fn train_step(
    model: &ModelConfig,
    params: &mut ModelParams<Tensor<f32>>,
    state: &mut AdamState<f32>,
    adam: &AdamConfig,
    batch: &[&Sample],
) -> Result<Step> {
    let (xv, xa) = batch_tensors(batch)?;
    let labels: Vec<usize> = batch.iter().map(|s| s.label as usize).collect();
    let mut g = Graph::<f32>::new();
    let p = params.bind(&mut g);
    let (v, a) = (g.constant(xv), g.constant(xa));
    let out = forward_graph(&mut g, model, &p, v, a)?;
    let preds: Vec<Prediction> = g
        .value(out.logits)
        .data()
        .chunks(2)
        .map(|l| Prediction::from_logits([l[0] as f64, l[1] as f64]))
        .collect();
    let mut loss_sum = 0.0;
    for (pr, &y) in preds.iter().zip(&labels) {
        loss_sum += loss(pr, y)?;
    }
    let objective = g.cross_entropy(out.logits, &labels)?;
    let mut grads = g.backward(objective)?;
    let gs: Vec<Tensor<f32>> = p
        .fields()
        .into_iter()
        .zip(params.fields())
        .map(|((_, &var), (_, t))| grads.take(var).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    let grad_refs: Vec<&Tensor<f32>> = gs.iter().collect();
    let mut targets: Vec<&mut Tensor<f32>> = params.fields_mut().into_iter().map(|(_, t)| t).collect();
    adam_step(&mut targets, &grad_refs, state, adam)?;
    Ok(Step { loss_sum, preds })
}

fn metrics_of(model: &ModelConfig, params: &ModelParams<Tensor<f32>>, samples: &[Sample], exec: Exec) -> Result<SplitMetrics> {
    let preds = score_samples(model, params, samples, exec)?;
    SplitMetrics::from_predictions(&preds, samples)
}

/// Trains in memory; see [`TrainOutcome::save`] for the on-disk layout.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.check(true)?;
    let train_set = data.samples(Split::Train, cfg.exec)?;
    let val_set = data.samples(Split::Val, cfg.exec)?;
    let fakes = train_set.iter().filter(|s| s.label == 1).count();
    if train_set.is_empty() || fakes == 0 || fakes == train_set.len() {
        return Err(Error::Contract(format!(
            "training split needs both classes; found {} fake and {} real clips",
            fakes,
            train_set.len() - fakes
        )));
    }
    let model = fit_model(&cfg.model, &train_set)?;
    if !val_set.is_empty() {
        fit_model(&model, &val_set)?;
    }
    let mut params = ModelParams::<Tensor<f32>>::init(&model, derive_str(cfg.seed, "init"))?;
    let mut state = AdamState::new(params.fields().into_iter().map(|(_, t)| t.shape()));

    let initial = metrics_of(&model, &params, &train_set, cfg.exec)?;
    let mut log = vec![LogRecord::Start {
        seed: cfg.seed,
        n_train: train_set.len(),
        n_val: val_set.len(),
        n_params: params.count(),
        initial_loss: initial.loss,
    }];
    let meta = |epoch, val_auc| CheckpointMeta {
        seed: cfg.seed,
        epoch: Some(epoch),
        val_auc,
    };
    let mut best: Option<(usize, f64, ModelParams<Tensor<f32>>)> = None;
    let mut last_val_auc = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        SeedRng::new(derive_str(cfg.seed, &format!("shuffle.{epoch}"))).shuffle(&mut order);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let step = train_step(&model, &mut params, &mut state, &cfg.adam, &batch)?;
            loss_sum += step.loss_sum;
            hits += step
                .preds
                .iter()
                .zip(&batch)
                .filter(|(p, s)| (p.y_hat >= 0.5) == (s.label == 1))
                .count();
        }
        let n = train_set.len() as f64;
        let val = if val_set.is_empty() {
            None
        } else {
            Some(metrics_of(&model, &params, &val_set, cfg.exec)?)
        };
        let val_auc = val.as_ref().and_then(|m| m.auc);
        last_val_auc = val_auc;
        if let Some(auc) = val_auc {
            if best.as_ref().is_none_or(|(_, b, _)| auc > *b) {
                best = Some((epoch, auc, params.clone()));
            }
        }
        log.push(LogRecord::Epoch {
            epoch,
            train_loss: loss_sum / n,
            train_acc: hits as f64 / n,
            val_auc,
            val_acc: val.as_ref().map(|m| m.acc),
            val_loss: val.as_ref().map(|m| m.loss),
        });
    }

    let final_train = metrics_of(&model, &params, &train_set, cfg.exec)?;
    let last = Checkpoint {
        config: model,
        params,
        meta: meta(cfg.epochs, last_val_auc),
        data_manifest: fs::canonicalize(&data.path).ok().map(|p| p.display().to_string()),
    };
    let best = match best {
        Some((epoch, auc, p)) => Checkpoint {
            config: model,
            params: p,
            meta: meta(epoch, Some(auc)),
            data_manifest: last.data_manifest.clone(),
        },
        None => last.clone(),
    };
    log.push(LogRecord::End {
        best_epoch: best.meta.epoch.unwrap_or(cfg.epochs),
        best_val_auc: best.meta.val_auc,
        final_train: final_train.clone(),
    });
    Ok(TrainOutcome {
        best,
        last,
        log,
        final_train,
    })
}
