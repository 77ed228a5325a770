//! Gaussian-blob classification data.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numcore::Matrix;
use crate::trainer::Dataset;

/// Largest margin accepted; beyond this the box holding the centers no longer
/// has headroom in `f64` for unit-variance noise to be meaningful.
pub const MAX_MARGIN: f64 = 1e100;

#[derive(Debug, Clone, PartialEq)]
pub struct BlobSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    /// Minimum pairwise distance between class centers.
    pub margin: f64,
    pub seed: u64,
}

/// Samples per class that go to the train split: `round(0.8 n)` kept within `[1, n-1]`.
pub fn train_count(per_class: usize) -> usize {
    ((per_class as f64 * 0.8).round() as usize).clamp(1, per_class - 1)
}

/// Class centers drawn uniformly from a cube, rejecting any closer than the
/// margin to an earlier center. The cube doubles after 1000 failed draws.
pub fn centers(spec: &BlobSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let mut half = spec.margin * (spec.classes as f64).powf(1.0 / spec.dim as f64);
    if half == 0.0 {
        half = 1.0;
    }
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(spec.classes);
    let mut failures = 0;
    while out.len() < spec.classes {
        let c: Vec<f64> = (0..spec.dim).map(|_| rng.random_range(-half..=half)).collect();
        let ok = out.iter().all(|o| {
            let d2: f64 = o.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum();
            d2.sqrt() >= spec.margin
        });
        if ok {
            out.push(c);
            continue;
        }
        failures += 1;
        if failures == 1000 {
            failures = 0;
            half *= 2.0;
            if !(half * 2.0).is_finite() {
                return Err(Error::Config(format!(
                    "cannot place {} centers {} apart in {} dimensions",
                    spec.classes, spec.margin, spec.dim
                )));
            }
        }
    }
    Ok(out)
}

/// Generates the `(train, val)` pair. Each class contributes
/// [`train_count`] samples to train and the rest to val; both splits are
/// shuffled.
pub fn generate(spec: &BlobSpec) -> Result<(Dataset, Dataset)> {
    if spec.classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {}", spec.classes)));
    }
    if spec.per_class < 2 {
        return Err(Error::Config(format!(
            "need at least 2 samples per class, got {}",
            spec.per_class
        )));
    }
    if spec.dim == 0 {
        return Err(Error::Config("feature dimension must be positive".into()));
    }
    if !(spec.margin >= 0.0 && spec.margin <= MAX_MARGIN) {
        return Err(Error::Config(format!(
            "margin {} outside [0, {MAX_MARGIN:e}]",
            spec.margin
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers = centers(spec, &mut rng)?;
    let n_train = train_count(spec.per_class);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (label, center) in centers.iter().enumerate() {
        for i in 0..spec.per_class {
            let x: Vec<f64> = center
                .iter()
                .map(|&m| m + rng.sample::<f64, _>(StandardNormal))
                .collect();
            if i < n_train { &mut train } else { &mut val }.push((label, x));
        }
    }
    train.shuffle(&mut rng);
    val.shuffle(&mut rng);
    Ok((to_dataset(train, spec)?, to_dataset(val, spec)?))
}

fn to_dataset(rows: Vec<(usize, Vec<f64>)>, spec: &BlobSpec) -> Result<Dataset> {
    let labels = rows.iter().map(|r| r.0).collect();
    let data = rows.into_iter().flat_map(|r| r.1).collect::<Vec<_>>();
    let n = data.len() / spec.dim;
    Dataset::new(Matrix::from_vec(n, spec.dim, data)?, labels, spec.classes)
}
