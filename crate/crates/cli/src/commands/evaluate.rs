use std::path::PathBuf;

use naln::encoders::encode_batch;
use naln::evalstats::summarize;
use naln::preproc::average_repetitions;
use naln::retrieval::{build_index, topk_accuracy, RetrievalReport};
use naln::{Error, Result};
use serde::Serialize;

use super::{load_seeds, Context};
use crate::report::{num, write_csv, write_json};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Database {
    /// Only the embeddings of the test labels.
    Test,
    /// Every embedding in the set.
    Extended,
}

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    embeddings: String,
    /// Cut-offs to score; repeat for several.
    #[arg(long = "k", required = true)]
    k: Vec<usize>,
    #[arg(long, value_enum, default_value_t = Database::Test)]
    database: Database,
    /// Seeds to score (default: every seed of the last training run).
    #[arg(long = "seed")]
    seed: Vec<u64>,
    /// Run directory (default `<outputs>/<embeddings>`).
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Serialize)]
struct SeedScore {
    seed: u64,
    report: RetrievalReport,
}

#[derive(Serialize)]
struct Evaluation {
    embeddings: String,
    database: Database,
    ks: Vec<usize>,
    mean_accuracy: Vec<f64>,
    std_error_accuracy: Vec<f64>,
    seeds: Vec<SeedScore>,
}

pub fn run(a: Args) -> Result<()> {
    let ctx = Context::open(&a.manifest, &a.embeddings)?;
    let run_dir = ctx.run_dir(a.run_dir.as_deref());
    let queries = average_repetitions(&ctx.test_epochs()?);
    let mut test_ids = queries.labels().to_vec();
    test_ids.sort_unstable();
    let database = match a.database {
        Database::Test => ctx.images.subset(&test_ids)?,
        Database::Extended => ctx.images.clone(),
    };
    let index = build_index(&database)?;
    let mut seeds = Vec::new();
    for (seed, params) in load_seeds(&run_dir, Some(&a.seed))? {
        let emb = encode_batch(&params, queries.data())?;
        let report = topk_accuracy(&index, &emb, queries.labels(), &a.k)?;
        seeds.push(SeedScore { seed, report });
    }
    if seeds.is_empty() {
        return Err(Error::Data("no trained seeds to evaluate".into()));
    }
    let ks = seeds[0].report.ks.clone();
    let mut mean = Vec::new();
    let mut se = Vec::new();
    for i in 0..ks.len() {
        let acc: Vec<f64> = seeds.iter().map(|s| s.report.accuracy[i]).collect();
        let s = summarize(&acc)?;
        mean.push(s.mean);
        se.push(s.std_error);
    }
    let tag = match a.database {
        Database::Test => "test",
        Database::Extended => "extended",
    };
    for ((k, m), e) in ks.iter().zip(&mean).zip(&se) {
        println!(
            "top-{k} accuracy ({tag}, {} candidates): {:.4} ± {:.4}",
            index.len(),
            m,
            e
        );
    }
    let rows: Vec<Vec<String>> = seeds
        .iter()
        .map(|s| {
            std::iter::once(format!("seed{}", s.seed))
                .chain(s.report.accuracy.iter().map(|&v| num(v)))
                .collect()
        })
        .collect();
    let header: Vec<String> = std::iter::once("unit".to_string())
        .chain(ks.iter().map(|k| format!("top{k}")))
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&run_dir.join(format!("retrieval_{tag}.csv")), &header, &rows)?;
    write_json(
        &run_dir.join(format!("retrieval_{tag}.json")),
        &Evaluation {
            embeddings: ctx.name.clone(),
            database: a.database,
            ks,
            mean_accuracy: mean,
            std_error_accuracy: se,
            seeds,
        },
    )
}
