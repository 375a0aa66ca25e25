use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Mean computed relative to the first element, so a constant slice yields
/// that constant exactly.
pub(crate) fn shifted_mean(values: &[f64]) -> f64 {
    let anchor = values[0];
    anchor + values.iter().map(|v| v - anchor).sum::<f64>() / values.len() as f64
}

/// Linear interpolation between order statistics of a sorted slice.
pub(crate) fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval for the mean of `diffs`.
///
/// Draws `resamples` resamples of `diffs.len()` values with replacement from
/// a ChaCha8 stream seeded with `seed`, and returns the `(1-level)/2` and
/// `1-(1-level)/2` percentiles of the resample means.
pub fn bootstrap_ci(diffs: &[f64], resamples: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    if diffs.is_empty() {
        return Err(Error::InvalidArgument(
            "bootstrap needs at least one value".into(),
        ));
    }
    if resamples == 0 {
        return Err(Error::InvalidArgument(
            "bootstrap needs at least one resample".into(),
        ));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("bootstrap input".into()));
    }
    let n = diffs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = vec![0.0; n];
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            for s in sample.iter_mut() {
                *s = diffs[rng.random_range(0..n)];
            }
            shifted_mean(&sample)
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((percentile(&means, alpha), percentile(&means, 1.0 - alpha)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_diffs_give_degenerate_interval() {
        for d in [0.1, -3.7, 1e-9, 12345.678] {
            assert_eq!(bootstrap_ci(&[d; 7], 500, 0.95, 3).unwrap(), (d, d));
        }
        assert_eq!(bootstrap_ci(&[0.0], 10, 0.95, 0).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn seeded_and_ordered() {
        let diffs = [0.3, -0.1, 0.8, 0.2, 0.5];
        let a = bootstrap_ci(&diffs, 1000, 0.95, 11).unwrap();
        assert_eq!(a, bootstrap_ci(&diffs, 1000, 0.95, 11).unwrap());
        assert!(a.0 <= a.1);
        let narrow = bootstrap_ci(&diffs, 1000, 0.5, 11).unwrap();
        assert!(narrow.0 >= a.0 && narrow.1 <= a.1);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(bootstrap_ci(&[], 10, 0.95, 0).is_err());
        assert!(bootstrap_ci(&[1.0], 0, 0.95, 0).is_err());
        assert!(bootstrap_ci(&[1.0], 10, 1.0, 0).is_err());
    }

    #[test]
    fn percentile_interpolates() {
        let v = [0.0, 10.0, 20.0, 30.0, 40.0];
        assert_eq!(percentile(&v, 0.0), 0.0);
        assert_eq!(percentile(&v, 1.0), 40.0);
        assert_eq!(percentile(&v, 0.5), 20.0);
        assert!((percentile(&v, 0.1) - 4.0).abs() < 1e-12);
    }
}
