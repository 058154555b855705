use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::epochs::{EpochSet, Recording};

/// Eigenvalues at or below this are treated as singular.
pub const EIGEN_FLOOR: f64 = 1e-10;

/// Eigen-decomposition of a symmetric `n × n` row-major matrix.
///
/// Returns eigenvalues ascending and the matching eigenvectors as the
/// columns of a row-major matrix.
pub fn symmetric_eigen<S: Scalar>(a: &[S], n: usize) -> Result<(Vec<S>, Vec<S>)> {
    if a.len() != n * n {
        return Err(Error::shape(format!("{} entries for a {n}×{n} matrix", a.len())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    let m = DMatrix::from_row_iterator(n, n, a.iter().map(|v| v.as_f64()));
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| S::of(eig.eigenvalues[i])).collect();
    let mut vectors = vec![S::zero(); n * n];
    for (col, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[r * n + col] = S::of(eig.eigenvectors[(r, src)]);
        }
    }
    Ok((values, vectors))
}

/// `Σ^{-1/2}` of a symmetric positive-definite matrix.
pub fn inverse_sqrt<S: Scalar>(sigma: &[S], n: usize) -> Result<Vec<S>> {
    let (values, vectors) = symmetric_eigen(sigma, n)?;
    if let Some(&min) = values.first() {
        if min.as_f64() <= EIGEN_FLOOR {
            return Err(Error::Numerical(format!(
                "covariance is singular: smallest eigenvalue {:e}",
                min.as_f64()
            )));
        }
    }
    let inv: Vec<S> = values.iter().map(|&l| S::one() / l.sqrt()).collect();
    let mut out = vec![S::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = (0..n)
                .map(|k| vectors[i * n + k] * inv[k] * vectors[j * n + k])
                .sum();
        }
    }
    Ok(out)
}

/// Channel covariance pooled over every time point of every `C × T` block,
/// shrunk toward its diagonal.
pub fn noise_covariance<S: Scalar>(blocks: &[&[S]], c: usize, shrinkage: f64) -> Result<Vec<S>> {
    if !(0.0..=1.0).contains(&shrinkage) {
        return Err(Error::param(format!("shrinkage {shrinkage} outside [0, 1]")));
    }
    let total: usize = blocks.iter().map(|b| b.len() / c.max(1)).sum();
    if total <= c {
        return Err(Error::param(format!(
            "{total} samples cannot estimate a {c}×{c} covariance"
        )));
    }
    let mut mean = vec![S::zero(); c];
    for b in blocks {
        let t = b.len() / c;
        for ch in 0..c {
            mean[ch] += b[ch * t..(ch + 1) * t].iter().copied().sum::<S>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= S::of_usize(total));
    let mut cov = vec![S::zero(); c * c];
    let mut centred = vec![S::zero(); c];
    for b in blocks {
        let t = b.len() / c;
        for s in 0..t {
            for ch in 0..c {
                centred[ch] = b[ch * t + s] - mean[ch];
            }
            for i in 0..c {
                for j in i..c {
                    cov[i * c + j] += centred[i] * centred[j];
                }
            }
        }
    }
    let denom = S::of_usize(total - 1);
    let keep = S::of(1.0 - shrinkage);
    for i in 0..c {
        for j in i..c {
            let v = cov[i * c + j] / denom;
            let v = if i == j { v } else { v * keep };
            cov[i * c + j] = v;
            cov[j * c + i] = v;
        }
    }
    Ok(cov)
}

fn apply<S: Scalar>(w: &[S], block: &[S], c: usize) -> Vec<S> {
    let t = block.len() / c;
    let mut out = vec![S::zero(); block.len()];
    for i in 0..c {
        let row = &mut out[i * t..(i + 1) * t];
        for k in 0..c {
            let wik = w[i * c + k];
            for (o, &x) in row.iter_mut().zip(&block[k * t..(k + 1) * t]) {
                *o += wik * x;
            }
        }
    }
    out
}

/// Multiplies every epoch by `Σ^{-1/2}` of the pooled channel covariance.
pub fn whiten<S: Scalar>(epochs: &EpochSet<S>, shrinkage: f64) -> Result<EpochSet<S>> {
    let c = epochs.n_channels();
    let blocks: Vec<&[S]> = (0..epochs.len()).map(|i| epochs.data().row(i)).collect();
    let sigma = noise_covariance(&blocks, c, shrinkage)?;
    let w = inverse_sqrt(&sigma, c)?;
    let data: Vec<S> = blocks.iter().flat_map(|b| apply(&w, b, c)).collect();
    EpochSet::new(
        Tensor::new(epochs.data().dims().to_vec(), data)?,
        epochs.sample_rate_hz,
        epochs.labels().to_vec(),
        epochs.repetitions().to_vec(),
        epochs.channels.clone(),
    )
}

/// [`whiten`] for a continuous recording, estimating one covariance over
/// the whole recording.
pub fn whiten_recording<S: Scalar>(rec: &Recording<S>, shrinkage: f64) -> Result<Recording<S>> {
    let c = rec.n_channels();
    let block = rec.samples.data();
    let sigma = noise_covariance(&[block], c, shrinkage)?;
    let w = inverse_sqrt(&sigma, c)?;
    Ok(Recording {
        samples: Tensor::new(rec.samples.dims().to_vec(), apply(&w, block, c))?,
        ..rec.clone()
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    fn epochs_from(data: Vec<f64>, n: usize, c: usize, t: usize) -> EpochSet<f64> {
        EpochSet::new(
            Tensor::new([n, c, t], data).unwrap(),
            100.0,
            vec![0; n],
            vec![0; n],
            EpochSet::<f64>::default_channel_names(c),
        )
        .unwrap()
    }

    fn cov_of(ep: &EpochSet<f64>) -> Vec<f64> {
        let blocks: Vec<&[f64]> = (0..ep.len()).map(|i| ep.data().row(i)).collect();
        noise_covariance(&blocks, ep.n_channels(), 0.0).unwrap()
    }

    fn correlated(n: usize, c: usize, t: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mix: Vec<f64> = (0..c * c).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut out = Vec::with_capacity(n * c * t);
        for _ in 0..n {
            let z: Vec<f64> = (0..c * t).map(|_| StandardNormal.sample(&mut rng)).collect();
            for i in 0..c {
                for s in 0..t {
                    out.push((0..c).map(|k| mix[i * c + k] * z[k * t + s]).sum::<f64>() + 0.5 * z[i * t + s]);
                }
            }
        }
        out
    }

    #[test]
    fn jacobi_matches_closed_form_2x2() {
        let (vals, vecs) = symmetric_eigen(&[2.0f64, 1.0, 1.0, 2.0], 2).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-14 && (vals[1] - 3.0).abs() < 1e-14);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((vecs[0].abs() - r).abs() < 1e-14 && (vecs[1].abs() - r).abs() < 1e-14);
    }

    #[test]
    fn diagonal_covariance_scales_channels() {
        // channel 0 variance 4, channel 1 variance 1, zero cross term
        let x0 = [2.0, -2.0, 2.0, -2.0];
        let x1 = [1.0, 1.0, -1.0, -1.0];
        let mut data = Vec::new();
        data.extend(x0);
        data.extend(x1);
        let ep = epochs_from(data, 1, 2, 4);
        let sigma = cov_of(&ep);
        let scale = sigma[3];
        let out = whiten(&ep, 0.0).unwrap();
        let d = out.data().data();
        for s in 0..4 {
            assert!((d[s] - x0[s] / (4.0 * scale).sqrt()).abs() < 1e-12);
            assert!((d[s] / d[4 + s] - (x0[s] / x1[s]) * 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn white_input_is_unchanged() {
        // orthogonal zero-mean ±1 patterns have covariance (4/3)·I
        let rows = [
            [1.0, 1.0, -1.0, -1.0],
            [1.0, -1.0, 1.0, -1.0],
            [1.0, -1.0, -1.0, 1.0],
        ];
        let k = (3.0f64 / 4.0).sqrt();
        let data: Vec<f64> = rows.iter().flatten().map(|v| v * k).collect();
        let ep = epochs_from(data.clone(), 1, 3, 4);
        let sigma = cov_of(&ep);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((sigma[i * 3 + j] - want).abs() < 1e-12);
            }
        }
        let out = whiten(&ep, 0.0).unwrap();
        for (a, b) in out.data().data().iter().zip(&data) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn output_covariance_is_identity() {
        let (n, c, t) = (10, 6, 50);
        let ep = epochs_from(correlated(n, c, t, 3), n, c, t);
        let out = whiten(&ep, 0.0).unwrap();
        let cov = cov_of(&out);
        let frob: f64 = (0..c * c)
            .map(|k| {
                let want = if k / c == k % c { 1.0 } else { 0.0 };
                (cov[k] - want).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        assert!(frob < 1e-6, "frobenius {frob}");
    }

    #[test]
    fn singular_covariance_reports_eigenvalue() {
        let row = [1.0, 2.0, 3.0, -1.0];
        let data: Vec<f64> = row.iter().chain(row.iter()).copied().collect();
        let ep = epochs_from(data, 1, 2, 4);
        let err = whiten(&ep, 0.0).unwrap_err();
        assert!(matches!(&err, Error::Numerical(m) if m.contains("smallest eigenvalue")));
        // shrinkage toward the diagonal restores invertibility
        assert!(whiten(&ep, 0.1).is_ok());
    }

    #[test]
    fn too_few_samples() {
        let ep = epochs_from(vec![1.0; 6], 1, 3, 2);
        assert!(matches!(whiten(&ep, 0.1), Err(Error::Parameter(_))));
        let ep = epochs_from(correlated(1, 2, 10, 1), 1, 2, 10);
        assert!(matches!(whiten(&ep, 1.5), Err(Error::Parameter(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn eigen_reconstructs(seed in 0u64..1000, n in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let a: Vec<f64> = (0..n * n).map(|k| {
                let (i, j) = (k / n, k % n);
                (b[i * n + j] + b[j * n + i]) / 2.0
            }).collect();
            let (vals, vecs) = symmetric_eigen(&a, n).unwrap();
            for w in vals.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            for i in 0..n {
                for j in 0..n {
                    let r: f64 = (0..n).map(|k| vecs[i * n + k] * vals[k] * vecs[j * n + k]).sum();
                    prop_assert!((r - a[i * n + j]).abs() < 1e-10);
                    let o: f64 = (0..n).map(|k| vecs[k * n + i] * vecs[k * n + j]).sum();
                    let eye = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((o - eye).abs() < 1e-10);
                }
            }
        }
    }
}
