use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::seed;

/// Percentile bootstrap interval of `metric` over `iterations` resamples of
/// the `n` (prediction, label) pairs with replacement.
///
/// Quantiles use the nearest-rank rule, so endpoints are always attained
/// metric values. Iteration `i` draws from its own derived stream.
pub fn bootstrap_ci<F>(
    predictions: &[usize],
    labels: &[usize],
    metric: F,
    iterations: usize,
    alpha: f64,
    rng_seed: u64,
) -> Result<(f64, f64)>
where
    F: Fn(&[usize], &[usize]) -> Result<f64>,
{
    if predictions.len() != labels.len() {
        return Err(shape_err!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        ));
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::Domain("bootstrap needs at least one sample".into()));
    }
    if iterations == 0 {
        return Err(Error::Domain("bootstrap needs at least one iteration".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha {alpha} not in (0, 1)")));
    }
    let mut values = Vec::with_capacity(iterations);
    let mut p = vec![0usize; n];
    let mut l = vec![0usize; n];
    for it in 0..iterations {
        let mut rng = seed::rng(rng_seed, &format!("bootstrap/{it}"));
        for j in 0..n {
            let k = rng.random_range(0..n);
            p[j] = predictions[k];
            l[j] = labels[k];
        }
        values.push(metric(&p, &l)?);
    }
    values.sort_by(f64::total_cmp);
    Ok((
        nearest_rank(&values, alpha / 2.0),
        nearest_rank(&values, 1.0 - alpha / 2.0),
    ))
}

/// Smallest value whose empirical CDF reaches `q`.
pub(crate) fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}
