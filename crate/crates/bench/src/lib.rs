//! Synthetic inputs shared by the benchmarks.

use lama_core::{Dataset, Label};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// `n` points in `dims` dimensions: a standard normal blob with roughly 5%
/// uniform outliers spread over a box four times wider.
pub fn blob(n: usize, dims: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outliers = (n / 20).max(2);
    let mut values = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let outlier = i >= n - outliers;
        for _ in 0..dims {
            let v: f64 = if outlier {
                rng.random_range(-4.0..4.0)
            } else {
                StandardNormal.sample(&mut rng)
            };
            values.push(v);
        }
        labels.push(if outlier { Label::Outlier } else { Label::Inlier });
    }
    Dataset::new("blob", DMatrix::from_row_slice(n, dims, &values), labels).expect("valid synthetic data")
}
