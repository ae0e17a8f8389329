use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use listenlab::config::KeyValues;
use listenlab::data::{synth_generate, Split, SynthConfig};
use listenlab::error::{Error, Result};
use listenlab::exec::Exec;
use listenlab::harness::{
    evaluate, export_mask, run_ablation, train, AblationConfig, AblationRow, Dataset, TrainConfig,
};
use listenlab::mam::AttentionVariant;
use listenlab::model::verify::{check_model_gradients, GradCheckSetup};
use listenlab::model::Fusion;

#[derive(Parser)]
#[command(name = "listenlab", version, about = "Listening-deepfake detector: data, training, evaluation")]
struct Cli {
    /// Scoring and generation mode.
    #[arg(long, global = true, default_value = "parallel")]
    exec: Exec,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a detector; writes best/, final/ and train_log.jsonl.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score one split with a checkpoint and write a JSON report.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        split: Split,
        #[arg(long)]
        report: PathBuf,
    },
    /// Train and test every (variant, fusion) row over several seeds.
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        rows: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training keys plus `seeds`; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients on micro models.
    GradCheck {
        #[arg(long)]
        f64: bool,
    },
    /// Write a clip's per-frame spatial masks as PGM images.
    ExportMask {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        clip: String,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the manifest recorded in the checkpoint.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn grad_check(use_f64: bool, exec: Exec) -> Result<bool> {
    let mut setups: Vec<(AttentionVariant, Fusion)> = AttentionVariant::ALL.iter().map(|&v| (v, Fusion::Agm)).collect();
    setups.push((AttentionVariant::Sca, Fusion::Concat));
    setups.push((AttentionVariant::Sca, Fusion::VisualOnly));
    let mut all = true;
    for (variant, fusion) in setups {
        let report = if use_f64 {
            check_model_gradients::<f64>(&GradCheckSetup::micro(variant, fusion), exec)?
        } else {
            check_model_gradients::<f32>(&GradCheckSetup::micro_f32(variant, fusion), exec)?
        };
        println!("== {variant} + {fusion}\n{report}");
        all &= report.passed();
    }
    println!("grad-check ({}): {}", if use_f64 { "f64" } else { "f32" }, if all { "PASS" } else { "FAIL" });
    Ok(all)
}

fn run(cli: Cli) -> Result<()> {
    let exec = cli.exec;
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = SynthConfig::from_kv(KeyValues::load(&config)?)?;
            let manifest = synth_generate(&cfg, &out, exec)?;
            println!("wrote {} clips to {}", manifest.records.len(), out.display());
        }
        Command::Train { manifest, config, out } => {
            let cfg = TrainConfig::load(&config)?;
            let data = Dataset::open(&manifest)?;
            let outcome = train(&data, &cfg)?;
            outcome.save(&out)?;
            let f = &outcome.final_train;
            println!(
                "best epoch {} (val AUC {}); final train loss {:.4} acc {:.4}",
                outcome.best.meta.epoch.unwrap_or(0),
                outcome.best.meta.val_auc.map_or("n/a".into(), |a| format!("{a:.4}")),
                f.loss,
                f.acc
            );
        }
        Command::Eval {
            ckpt,
            manifest,
            split,
            report,
        } => {
            let r = evaluate(&ckpt, &manifest, split, exec)?;
            r.save(&report)?;
            println!(
                "{split}: n={} AUC {} ACC {:.4}",
                r.n_samples,
                r.auc.map_or("n/a".into(), |a| format!("{a:.4}")),
                r.acc
            );
        }
        Command::Ablate {
            manifest,
            rows,
            out,
            config,
        } => {
            let cfg = match config {
                Some(p) => AblationConfig::load(&p)?,
                None => AblationConfig::default(),
            };
            let rows = AblationRow::parse_list(&read(&rows)?)?;
            let data = Dataset::open(&manifest)?;
            let table = run_ablation(&data, &cfg, &rows, exec)?;
            table.save(&out)?;
            print!("{}", table.to_text());
        }
        Command::GradCheck { f64 } => {
            if !grad_check(f64, exec)? {
                return Err(Error::Contract("gradient check failed".into()));
            }
        }
        Command::ExportMask {
            ckpt,
            clip,
            out,
            manifest,
        } => {
            let manifest = match manifest {
                Some(p) => p,
                None => listenlab::model::checkpoint::load(&ckpt)?
                    .data_manifest
                    .map(PathBuf::from)
                    .ok_or_else(|| Error::Contract("checkpoint records no manifest; pass --manifest".into()))?,
            };
            let data = Dataset::open(&manifest)?;
            let masks = export_mask(&ckpt, &data, &clip, &out)?;
            println!("wrote {} masks to {}", masks.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
