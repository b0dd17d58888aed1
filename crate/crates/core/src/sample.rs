//! Small weighted-sampling helpers shared across the pipeline.

use rand::{Rng, RngExt};

/// Sample an index proportional to `weights`. Weights must be nonnegative
/// with a positive sum; falls back to the last positive entry on rounding.
pub(crate) fn weighted_index(rng: &mut impl Rng, weights: &[f64]) -> usize {
    debug_assert!(weights.iter().all(|w| *w >= 0.0));
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0, "weighted_index needs positive total weight");
    let mut u = rng.random::<f64>() * total;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
            if u < w {
                return i;
            }
            u -= w;
        }
    }
    last_positive
}

/// Sample one item from `(item, weight)` pairs proportional to weight.
pub(crate) fn weighted_choice<T: Copy>(rng: &mut impl Rng, items: &[(T, f64)]) -> T {
    let idx = {
        let weights: Vec<f64> = items.iter().map(|(_, w)| *w).collect();
        weighted_index(rng, &weights)
    };
    items[idx].0
}
