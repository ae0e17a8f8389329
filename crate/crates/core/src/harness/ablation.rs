use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::eval::evaluate_params;
use super::train::{train, TrainConfig};
use super::Dataset;
use crate::config::KeyValues;
use crate::data::Split;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::mam::AttentionVariant;
use crate::model::Fusion;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct AblationRow {
    pub variant: AttentionVariant,
    pub fusion: Fusion,
}

impl AblationRow {
    pub fn label(&self) -> String {
        format!("{}+{}", self.variant, self.fusion)
    }

    /// One `variant fusion` pair per line; `#` comments and blank lines skipped.
    pub fn parse_list(text: &str) -> Result<Vec<AblationRow>> {
        let mut rows = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|p| !p.is_empty()).collect();
            let bad = |msg: String| Error::Parse { line: i + 1, msg };
            if parts.len() != 2 {
                return Err(bad(format!("expected `variant fusion`, got `{line}`")));
            }
            rows.push(AblationRow {
                variant: parts[0].parse().map_err(|e| bad(format!("{e}")))?,
                fusion: parts[1].parse().map_err(|e| bad(format!("{e}")))?,
            });
        }
        if rows.is_empty() {
            return Err(Error::Config("ablation needs at least one row".into()));
        }
        Ok(rows)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationConfig {
    pub base: TrainConfig,
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self::with_seed_count(TrainConfig::default(), 5)
    }
}

impl AblationConfig {
    /// Seeds `base.seed, base.seed + 1, ...`.
    pub fn with_seed_count(base: TrainConfig, count: usize) -> Self {
        let seeds = (0..count as u64).map(|k| base.seed.wrapping_add(k)).collect();
        AblationConfig { base, seeds }
    }

    /// Training keys plus `seeds` (how many).
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let base = TrainConfig::take_from(&mut kv)?;
        let count: usize = kv.take_or("seeds", 5)?;
        kv.finish()?;
        if count == 0 {
            return Err(Error::Config("seeds must be at least 1".into()));
        }
        Ok(Self::with_seed_count(base, count))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunResult {
    pub row: usize,
    pub seed: u64,
    pub auc: f64,
    pub acc: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RowSummary {
    pub row: AblationRow,
    pub n_seeds: usize,
    pub auc_mean: f64,
    pub auc_sd: f64,
    pub acc_mean: f64,
    pub acc_sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationTable {
    pub rows: Vec<RowSummary>,
    pub runs: Vec<RunResult>,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl AblationTable {
    /// Test AUC of `row` for each seed, in seed order.
    pub fn aucs(&self, row: usize) -> Vec<f64> {
        self.runs.iter().filter(|r| r.row == row).map(|r| r.auc).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,variant,fusion,n_seeds,auc_mean,auc_sd,acc_mean,acc_sd\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
                r.row.label(),
                r.row.variant,
                r.row.fusion,
                r.n_seeds,
                r.auc_mean,
                r.auc_sd,
                r.acc_mean,
                r.acc_sd
            );
        }
        s
    }

    pub fn runs_csv(&self) -> String {
        let mut s = String::from("row,seed,auc,acc,best_epoch\n");
        for r in &self.runs {
            let _ = writeln!(s, "{},{},{:.6},{:.6},{}", self.rows[r.row].row.label(), r.seed, r.auc, r.acc, r.best_epoch);
        }
        s
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.row.label().len()).max().unwrap_or(3).max(3);
        let mut s = format!("{:<width$}  {:>17}  {:>17}\n", "row", "test AUC (%)", "test ACC (%)");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$}  {:>8.2} ± {:<6.2}  {:>8.2} ± {:<6.2}",
                r.row.label(),
                100.0 * r.auc_mean,
                100.0 * r.auc_sd,
                100.0 * r.acc_mean,
                100.0 * r.acc_sd
            );
        }
        s
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        for (name, text) in [("table.csv", self.to_csv()), ("table.txt", self.to_text()), ("runs.csv", self.runs_csv())] {
            let path = out.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Trains every row under every seed and scores the best-validation
/// checkpoint on the test split. Runs are independent and may execute in
/// parallel; each one is sequential inside.
pub fn run_ablation(data: &Dataset, cfg: &AblationConfig, rows: &[AblationRow], exec: Exec) -> Result<AblationTable> {
    if rows.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one row and one seed".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..rows.len())
        .flat_map(|r| cfg.seeds.iter().map(move |&s| (r, s)))
        .collect();
    let results = exec.map(jobs, |(r, seed)| -> Result<RunResult> {
        let mut tc = cfg.base.clone();
        tc.model.variant = rows[r].variant;
        tc.model.fusion = rows[r].fusion;
        tc.seed = seed;
        tc.exec = Exec::Sequential;
        let outcome = train(data, &tc)?;
        let best = &outcome.best;
        let report = evaluate_params(&best.config, &best.params, &best.meta, data, Split::Test, Exec::Sequential)?;
        let auc = report
            .auc
            .ok_or_else(|| Error::UndefinedMetric("test split holds a single class".into()))?;
        Ok(RunResult {
            row: r,
            seed,
            auc,
            acc: report.acc,
            best_epoch: best.meta.epoch.unwrap_or(0),
        })
    });
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summaries = rows
        .iter()
        .enumerate()
        .map(|(i, &row)| {
            let aucs: Vec<f64> = runs.iter().filter(|x| x.row == i).map(|x| x.auc).collect();
            let accs: Vec<f64> = runs.iter().filter(|x| x.row == i).map(|x| x.acc).collect();
            let (auc_mean, auc_sd) = mean_sd(&aucs);
            let (acc_mean, acc_sd) = mean_sd(&accs);
            RowSummary {
                row,
                n_seeds: aucs.len(),
                auc_mean,
                auc_sd,
                acc_mean,
                acc_sd,
            }
        })
        .collect();
    Ok(AblationTable { rows: summaries, runs })
}
