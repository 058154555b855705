//! Closed-form ridge decoders as an independent check on the synthetic data.

use nalgebra::DMatrix;
use naln::preproc::{average_repetitions, EpochSet};
use naln::retrieval::EmbeddingSet;
use naln::synthgen::{generate, SynthConfig};

fn flat(epochs: &EpochSet<f64>) -> DMatrix<f64> {
    let n = epochs.len();
    let f = epochs.n_channels() * epochs.n_samples();
    DMatrix::from_row_slice(n, f, epochs.data().data())
}

fn targets(epochs: &EpochSet<f64>, images: &EmbeddingSet<f64>) -> DMatrix<f64> {
    let pos = images.positions();
    let d = images.dim();
    let mut y = DMatrix::zeros(epochs.len(), d);
    for (i, l) in epochs.labels().iter().enumerate() {
        let row = images.row(pos[l]);
        for j in 0..d {
            y[(i, j)] = row[j];
        }
    }
    y
}

/// Dual-form ridge: `Ŷ = X_q Xᵀ (X Xᵀ + λ I)⁻¹ Y`.
fn ridge_predict(x: &DMatrix<f64>, y: &DMatrix<f64>, xq: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let n = x.nrows();
    let gram = x * x.transpose() + DMatrix::identity(n, n) * lambda;
    let alpha = gram.cholesky().expect("ridge gram is positive definite").solve(y);
    xq * x.transpose() * alpha
}

/// Share of queries whose most cosine-similar candidate is their own class.
fn top1(pred: &DMatrix<f64>, labels: &[u64], images: &EmbeddingSet<f64>, candidates: &[u64]) -> f64 {
    let pos = images.positions();
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let mut hits = 0;
    for (i, &l) in labels.iter().enumerate() {
        let q: Vec<f64> = pred.row(i).iter().copied().collect();
        let best = candidates
            .iter()
            .max_by(|&&a, &&b| cos(&q, images.row(pos[&a])).total_cmp(&cos(&q, images.row(pos[&b]))))
            .unwrap();
        hits += usize::from(*best == l);
    }
    hits as f64 / labels.len() as f64
}

fn oracle_top1(cfg: &SynthConfig, misaligned: bool, lambda: f64) -> f64 {
    let ds = generate(cfg).unwrap();
    let images = if misaligned { &ds.misaligned } else { &ds.aligned };
    let test = average_repetitions(&ds.test);
    let pred = ridge_predict(&flat(&ds.train), &targets(&ds.train, images), &flat(&test), lambda);
    top1(&pred, test.labels(), images, &ds.test_ids())
}

#[test]
fn noiseless_held_out_repetitions_are_decoded_perfectly() {
    let cfg = SynthConfig {
        noise_std: 0.0,
        ..SynthConfig::default()
    };
    assert_eq!(oracle_top1(&cfg, false, 1e-8), 1.0);
}

#[test]
fn oracle_accuracy_does_not_rise_with_misalignment() {
    let acc: Vec<f64> = [0.0, 0.5, 1.0]
        .iter()
        .map(|&g| {
            let cfg = SynthConfig {
                train_classes: 512,
                train_repetitions: 1,
                misalignment_strength: g,
                ..SynthConfig::default()
            };
            oracle_top1(&cfg, true, 100.0)
        })
        .collect();
    assert!(acc[0] >= acc[1] && acc[1] >= acc[2], "{acc:?}");
    assert!(acc[0] > acc[2] + 0.3, "{acc:?}");
}

#[test]
fn oracle_clears_the_recovery_bar_in_the_zero_shot_setting() {
    let cfg = SynthConfig {
        train_classes: 1024,
        train_repetitions: 1,
        ..SynthConfig::default()
    };
    let acc = oracle_top1(&cfg, false, 100.0);
    assert!(acc >= 0.95, "ridge top-1 {acc}");
}
