//! Shared fixtures for the criterion benches.

use normkd_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A student/teacher logit pair plus labels for an `n × c` batch.
pub struct Batch {
    pub student: Matrix,
    pub teacher: Matrix,
    pub labels: Vec<usize>,
}

pub fn batch(n: usize, c: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut logits = |scale: f64| {
        let v = (0..n * c).map(|_| rng.random_range(-scale..scale)).collect();
        Matrix::from_vec(n, c, v).expect("shape")
    };
    let student = logits(3.0);
    let teacher = logits(6.0);
    let labels = (0..n).map(|i| i % c).collect();
    Batch {
        student,
        teacher,
        labels,
    }
}
