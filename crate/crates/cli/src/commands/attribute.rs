use std::path::{Path, PathBuf};

use naln::attribution::{
    band_compare, electrode_aggregate, gradcam_epochs, map_band_energies, threshold_histogram,
    AttributionMap, BandComparison, BandEnergies, BandSpec, ThresholdHistogram,
};
use naln::preproc::{average_repetitions, EpochSet};
use naln::Result;
use serde::Serialize;

use super::{load_seeds, Context};
use crate::report::{num, write_csv, write_json};

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    embeddings: String,
    /// Values above this per-seed percentile count towards the time histogram.
    #[arg(long, default_value_t = 99.0)]
    percentile: f64,
    /// Seeds to attribute (default: every trained seed).
    #[arg(long = "seed")]
    seed: Vec<u64>,
    /// Second embedding set whose trained run is compared band by band.
    #[arg(long)]
    compare: Option<String>,
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Serialize)]
struct Attribution {
    embeddings: String,
    seeds: Vec<u64>,
    histogram: ThresholdHistogram,
    band_energies: Vec<BandEnergies>,
    electrodes: Vec<(String, f64)>,
    zero_gradient_maps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    comparison: Option<Comparison>,
}

#[derive(Serialize)]
struct Comparison {
    against: String,
    bands: Vec<BandComparison>,
}

fn seed_maps(run_dir: &Path, only: &[u64], epochs: &EpochSet<f64>, ctx: &Context) -> Result<Vec<(u64, Vec<AttributionMap>)>> {
    load_seeds(run_dir, Some(only))?
        .into_iter()
        .map(|(s, params)| Ok((s, gradcam_epochs(&params, epochs, &ctx.images)?)))
        .collect()
}

pub fn run(a: Args) -> Result<()> {
    let ctx = Context::open(&a.manifest, &a.embeddings)?;
    let run_dir = ctx.run_dir(a.run_dir.as_deref());
    let epochs = average_repetitions(&ctx.test_epochs()?);
    let fs = epochs.sample_rate_hz;
    let bands = BandSpec::standard(fs);

    let per_seed = seed_maps(&run_dir, &a.seed, &epochs, &ctx)?;
    let groups: Vec<Vec<AttributionMap>> = per_seed.iter().map(|(_, m)| m.clone()).collect();
    let histogram = threshold_histogram(&groups, a.percentile)?;
    let energies = groups
        .iter()
        .map(|g| map_band_energies(g, fs, &bands))
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<AttributionMap> = groups.iter().flatten().cloned().collect();
    let electrodes = electrode_aggregate(&all, &epochs.channels)?;
    let zero_gradient_maps = all.iter().filter(|m| m.zero_gradient).count();

    let comparison = match &a.compare {
        Some(other) => {
            let octx = Context::open(&a.manifest, other)?;
            let odir = octx.run_dir(None);
            let omaps = seed_maps(&odir, &[], &epochs, &octx)?;
            let oenergies = omaps
                .iter()
                .map(|(_, g)| map_band_energies(g, fs, &bands))
                .collect::<Result<Vec<_>>>()?;
            Some(Comparison {
                against: other.clone(),
                bands: band_compare(&energies, &oenergies)?,
            })
        }
        None => None,
    };

    let t = histogram.counts.len();
    println!(
        "{} maps over {} seeds; {:.1}% of above-threshold mass in the first 40% of the epoch",
        all.len(),
        per_seed.len(),
        100.0 * histogram.mass_before((0.4 * t as f64).round() as usize)
    );
    if zero_gradient_maps > 0 {
        println!("{zero_gradient_maps} maps had an all-zero gradient");
    }

    let hist_rows: Vec<Vec<String>> = histogram
        .counts
        .iter()
        .enumerate()
        .map(|(i, c)| vec![i.to_string(), num(1000.0 * i as f64 / fs), c.to_string()])
        .collect();
    write_csv(&run_dir.join("attribution_histogram.csv"), &["sample", "time_ms", "count"], &hist_rows)?;

    let names = bands.names();
    let header: Vec<&str> = std::iter::once("unit").chain(names.iter().map(String::as_str)).collect();
    let band_rows: Vec<Vec<String>> = per_seed
        .iter()
        .zip(&energies)
        .map(|((s, _), e)| {
            std::iter::once(format!("seed{s}"))
                .chain(e.fractions.iter().map(|&f| num(f)))
                .collect()
        })
        .collect();
    write_csv(&run_dir.join("attribution_bands.csv"), &header, &band_rows)?;

    let el_rows: Vec<Vec<String>> = electrodes.iter().map(|(c, v)| vec![c.clone(), num(*v)]).collect();
    write_csv(&run_dir.join("attribution_electrodes.csv"), &["channel", "share"], &el_rows)?;

    write_json(
        &run_dir.join("attribution.json"),
        &Attribution {
            embeddings: ctx.name.clone(),
            seeds: per_seed.iter().map(|(s, _)| *s).collect(),
            histogram,
            band_energies: energies,
            electrodes,
            zero_gradient_maps,
            comparison,
        },
    )
}
