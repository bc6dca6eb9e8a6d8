use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::DenseMatrix;
use crate::error::{HutError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fill {
    Constant(f64),
    Gaussian { mean: f64, std: f64 },
}

/// Deterministic matrix initialisation. The same `(shape, fill, seed)` always
/// yields bitwise-identical values.
pub fn seeded_fill(rows: usize, cols: usize, fill: Fill, seed: u64) -> Result<DenseMatrix> {
    match fill {
        Fill::Constant(c) => DenseMatrix::new(rows, cols, vec![c; rows * cols]),
        Fill::Gaussian { mean, std } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            gaussian_with(rows, cols, mean, std, &mut rng)
        }
    }
}

/// Gaussian fill drawing from a caller-owned generator.
pub fn gaussian_with(
    rows: usize,
    cols: usize,
    mean: f64,
    std: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DenseMatrix> {
    if !(std >= 0.0 && std.is_finite()) {
        return Err(HutError::InvalidArgument(format!(
            "standard deviation must be finite and non-negative, got {std}"
        )));
    }
    if std == 0.0 {
        return DenseMatrix::new(rows, cols, vec![mean; rows * cols]);
    }
    let normal = Normal::new(mean, std).expect("validated std");
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    DenseMatrix::new(rows, cols, data)
}
