#![allow(dead_code)]

use ndarray::Array2;
use poglm::{Scheme, SeededRng, SpikeTrain, VariationalParams};

pub fn random_train(visible: usize, bins: usize, max_count: usize, rng: &mut SeededRng) -> SpikeTrain {
    let counts = Array2::from_shape_fn((bins, visible), |_| rng.index(max_count + 1) as u32);
    SpikeTrain::new(counts, None).unwrap()
}

/// Free entries drawn from `U(lo, hi)`, masked entries zero.
pub fn random_phi(
    scheme: Scheme,
    visible: usize,
    hidden: usize,
    bins: usize,
    lo: f64,
    hi: f64,
    rng: &mut SeededRng,
) -> VariationalParams {
    let mut phi = VariationalParams::zeros(scheme, visible, hidden, Some(bins)).unwrap();
    let flat: Vec<f64> = (0..phi.flat_len()).map(|_| rng.uniform_range(lo, hi)).collect();
    phi.set_flat(&flat).unwrap();
    phi
}

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-coordinate mean and standard error over rows of equal length.
pub fn column_mean_se(rows: &[Vec<f64>]) -> Vec<(f64, f64)> {
    (0..rows[0].len())
        .map(|i| mean_se(&rows.iter().map(|r| r[i]).collect::<Vec<_>>()))
        .collect()
}

/// Flat indices of the free variational coordinates.
pub fn free_indices(phi: &VariationalParams) -> Vec<usize> {
    phi.flat_mask()
        .into_iter()
        .enumerate()
        .filter_map(|(i, f)| f.then_some(i))
        .collect()
}
