use std::collections::BTreeMap;
use std::path::PathBuf;

use naln::encoders::{Architecture, EncoderConfig};
use naln::io::{save_embeddings, save_epochs, write_file, DatasetSection, EmbeddingEntry, Manifest, OutputSection};
use naln::synthgen::{generate, AlignmentMode, SynthConfig};
use naln::trainer::TrainConfig;
use naln::Result;

#[derive(clap::Args)]
pub struct Args {
    /// Directory receiving the dataset files and `manifest.toml`.
    #[arg(long)]
    out: PathBuf,
    /// Test classes.
    #[arg(long, default_value_t = 64)]
    classes: usize,
    /// Additional classes used only for training (0 trains on repetitions of the test classes).
    #[arg(long, default_value_t = 0)]
    train_classes: usize,
    #[arg(long, default_value_t = 4)]
    train_reps: usize,
    #[arg(long, default_value_t = 4)]
    test_reps: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 16)]
    channels: usize,
    #[arg(long, default_value_t = 64)]
    samples: usize,
    #[arg(long, default_value_t = 250.0)]
    sample_rate: f64,
    /// Standard deviation of the additive trial noise.
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    /// Blend weight of the misaligning warp, in [0, 1].
    #[arg(long, default_value_t = 1.0)]
    strength: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn run(a: Args) -> Result<()> {
    let cfg = SynthConfig {
        n_classes: a.classes,
        train_classes: a.train_classes,
        train_repetitions: a.train_reps,
        test_repetitions: a.test_reps,
        embed_dim: a.dim,
        channels: a.channels,
        samples: a.samples,
        sample_rate_hz: a.sample_rate,
        noise_std: a.noise,
        alignment_mode: AlignmentMode::Aligned,
        misalignment_strength: a.strength,
        seed: a.seed,
    };
    let ds = generate(&cfg)?;
    let p = |name: &str| a.out.join(name);
    save_epochs(&p("train_epochs.naln"), &p("train_labels.naln"), &ds.train)?;
    save_epochs(&p("test_epochs.naln"), &p("test_labels.naln"), &ds.test)?;
    save_embeddings(&p("aligned.naln"), &p("aligned_ids.naln"), &ds.aligned)?;
    save_embeddings(&p("misaligned.naln"), &p("misaligned_ids.naln"), &ds.misaligned)?;

    let entry = |name: &str| EmbeddingEntry {
        vectors: format!("{name}.naln").into(),
        ids: Some(format!("{name}_ids.naln").into()),
    };
    let mut embeddings = BTreeMap::new();
    embeddings.insert("aligned".to_string(), entry("aligned"));
    embeddings.insert("misaligned".to_string(), entry("misaligned"));
    let architecture = Architecture::NiceConv {
        temporal_filters: 8,
        temporal_kernel: 13.min(a.samples),
        spatial_filters: 16,
        pool_width: 4.min(a.samples.saturating_sub(13.min(a.samples)) + 1),
    };
    let manifest = Manifest::new(
        DatasetSection {
            sample_rate_hz: a.sample_rate,
            channels: ds.train.channels.clone(),
            train_epochs: "train_epochs.naln".into(),
            train_labels: "train_labels.naln".into(),
            test_epochs: "test_epochs.naln".into(),
            test_labels: "test_labels.naln".into(),
        },
        embeddings,
        EncoderConfig::new(architecture, a.channels, a.samples, a.dim, a.seed),
        TrainConfig {
            max_epochs: 100,
            seed: a.seed,
            ..TrainConfig::default()
        },
        OutputSection { dir: "out".into() },
    );
    write_file(&p("manifest.toml"), manifest.to_toml()?)?;
    println!(
        "wrote {} training and {} test epochs, {} embeddings per set, to {}",
        ds.train.len(),
        ds.test.len(),
        ds.aligned.len(),
        a.out.display()
    );
    Ok(())
}
