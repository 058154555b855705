use std::path::PathBuf;

use naln::evalstats::summarize;
use naln::io::save_checkpoint;
use naln::trainer::{fit, TrainReport};
use naln::Result;
use serde::Serialize;

use super::{checkpoint_dir, seed_dir, Context, TRAIN_SUMMARY};
use crate::report::{num, write_csv, write_json};

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    manifest: PathBuf,
    /// Name of the embedding set to align to.
    #[arg(long)]
    embeddings: String,
    /// Number of seeded fits; fit `i` offsets both the encoder and training seeds by `i`.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Overrides the manifest's epoch limit.
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Output directory (default `<outputs>/<embeddings>`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct SeedRun {
    seed: u64,
    report: TrainReport,
}

#[derive(Serialize)]
struct Summary {
    embeddings: String,
    seeds: Vec<u64>,
    mean_best_val_loss: f64,
    std_error_best_val_loss: f64,
    mean_stopped_epoch: f64,
    runs: Vec<SeedRun>,
}

pub fn run(a: Args) -> Result<()> {
    let ctx = Context::open(&a.manifest, &a.embeddings)?;
    let epochs = ctx.train_epochs()?;
    let run_dir = ctx.run_dir(a.out.as_deref());
    let mut runs = Vec::new();
    for i in 0..a.seeds {
        let mut encoder = ctx.manifest.encoder.clone();
        encoder.seed += i;
        let mut cfg = ctx.manifest.training.clone();
        cfg.seed += i;
        if let Some(e) = a.max_epochs {
            cfg.max_epochs = e;
        }
        let (params, mut report) = fit(&encoder, &epochs, &ctx.images, &cfg)?;
        let ckpt = checkpoint_dir(&run_dir, i);
        save_checkpoint(&ckpt, &params)?;
        report.checkpoint = Some(format!("seed{i}/checkpoint"));
        write_json(&seed_dir(&run_dir, i).join("train_report.json"), &report)?;
        println!(
            "seed {i}: {} epochs, best val loss {:.4} at epoch {}",
            report.stopped_epoch, report.best_val_loss, report.best_epoch
        );
        runs.push(SeedRun { seed: i, report });
    }

    let best: Vec<f64> = runs.iter().map(|r| r.report.best_val_loss).collect();
    let stopped: Vec<f64> = runs.iter().map(|r| r.report.stopped_epoch as f64).collect();
    let s = summarize(&best)?;
    let summary = Summary {
        embeddings: ctx.name.clone(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        mean_best_val_loss: s.mean,
        std_error_best_val_loss: s.std_error,
        mean_stopped_epoch: summarize(&stopped)?.mean,
        runs,
    };
    write_json(&run_dir.join(TRAIN_SUMMARY), &summary)?;
    let rows: Vec<Vec<String>> = summary
        .runs
        .iter()
        .map(|r| {
            vec![
                format!("seed{}", r.seed),
                num(r.report.initial_val_loss),
                num(r.report.best_val_loss),
                r.report.best_epoch.to_string(),
                r.report.stopped_epoch.to_string(),
            ]
        })
        .collect();
    write_csv(
        &run_dir.join("train_summary.csv"),
        &["unit", "initial_val_loss", "best_val_loss", "best_epoch", "stopped_epoch"],
        &rows,
    )?;
    println!("mean best val loss over {} seeds: {:.4}", a.seeds, s.mean);
    Ok(())
}
