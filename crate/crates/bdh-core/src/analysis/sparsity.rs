//! Per-token activation sparsity: fraction of strictly-positive y entries,
//! per layer, with an optional breakdown by RoPE wavelength buckets.

use super::AnalysisError;
use crate::model::{ActivationTrace, ModelParams};

#[derive(Debug, Clone)]
pub struct SparsityTrace {
    /// fractions[t][layer]: non-zero fraction of y.
    pub fractions: Vec<Vec<f64>>,
    /// With bucketing: per token, per layer, per bucket non-zero fraction.
    pub bucket_fractions: Option<Vec<Vec<Vec<f64>>>>,
    /// Wavelength range (lo, hi) of each bucket.
    pub bucket_ranges: Option<Vec<(f64, f64)>>,
}

/// Bucket index per neuron, log-spaced over the model's wavelength span.
fn neuron_buckets(params: &ModelParams, n_buckets: usize) -> (Vec<usize>, Vec<(f64, f64)>) {
    let cfg = &params.config;
    let (nh, pairs) = (cfg.nh(), cfg.pairs_per_head());
    let mut wavelengths = Vec::with_capacity(cfg.n);
    for head in 0..cfg.heads {
        let freqs = params.rope_freqs_head(head);
        for p in 0..pairs {
            let lambda = std::f64::consts::TAU / freqs[p] as f64;
            wavelengths.push(lambda);
            wavelengths.push(lambda);
        }
    }
    debug_assert_eq!(wavelengths.len(), cfg.heads * nh);
    let lo = wavelengths.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = wavelengths.iter().cloned().fold(0.0f64, f64::max);
    let span = (hi / lo).ln().max(f64::MIN_POSITIVE);
    let bucket_of = |lambda: f64| -> usize {
        let frac = (lambda / lo).ln() / span;
        ((frac * n_buckets as f64) as usize).min(n_buckets - 1)
    };
    let ranges: Vec<(f64, f64)> = (0..n_buckets)
        .map(|k| {
            (
                lo * (span * k as f64 / n_buckets as f64).exp(),
                lo * (span * (k + 1) as f64 / n_buckets as f64).exp(),
            )
        })
        .collect();
    (wavelengths.into_iter().map(bucket_of).collect(), ranges)
}

/// Non-zero means strictly greater than zero: ReLU outputs are exact zeros.
pub fn sparsity_trace(
    trace: &ActivationTrace,
    rope_buckets: Option<(&ModelParams, usize)>,
) -> Result<SparsityTrace, AnalysisError> {
    let layers = trace.config.layers;
    let n = trace.config.n;
    let mut fractions = Vec::with_capacity(trace.len());
    for t in 0..trace.len() {
        let row: Vec<f64> = (0..layers)
            .map(|l| {
                trace.y[t][l].iter().filter(|&&v| v > 0.0).count() as f64 / n as f64
            })
            .collect();
        fractions.push(row);
    }
    let mut bucket_fractions = None;
    let mut bucket_ranges = None;
    if let Some((params, n_buckets)) = rope_buckets {
        if n_buckets == 0 {
            return Err(AnalysisError::Argument("need at least one bucket".into()));
        }
        if params.config != trace.config {
            return Err(AnalysisError::Argument(
                "params and trace come from different configs".into(),
            ));
        }
        let (assignment, ranges) = neuron_buckets(params, n_buckets);
        let mut bucket_sizes = vec![0usize; n_buckets];
        for &b in &assignment {
            bucket_sizes[b] += 1;
        }
        let mut all = Vec::with_capacity(trace.len());
        for t in 0..trace.len() {
            let mut per_layer = Vec::with_capacity(layers);
            for l in 0..layers {
                let mut counts = vec![0usize; n_buckets];
                for (idx, &v) in trace.y[t][l].iter().enumerate() {
                    if v > 0.0 {
                        counts[assignment[idx]] += 1;
                    }
                }
                per_layer.push(
                    counts
                        .iter()
                        .zip(&bucket_sizes)
                        .map(|(&c, &s)| if s == 0 { 0.0 } else { c as f64 / s as f64 })
                        .collect(),
                );
            }
            all.push(per_layer);
        }
        bucket_fractions = Some(all);
        bucket_ranges = Some(ranges);
    }
    Ok(SparsityTrace { fractions, bucket_fractions, bucket_ranges })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward_parallel, init_params, ModelConfig};

    fn cfg() -> ModelConfig {
        ModelConfig {
            n: 32,
            d: 8,
            layers: 2,
            heads: 2,
            vocab_size: 9,
            dropout: 0.0,
            rope_wavelength_range: (2.0, 32.0),
            alibi_gamma: 1.0,
            eps: 1e-5,
        }
    }

    #[test]
    fn zero_and_dense_y_hit_the_bounds() {
        let params = init_params(&cfg(), 3).unwrap();
        let (_, mut trace) = forward_parallel(&params, &[1, 2, 3, 4], None).unwrap();
        // First token always has y = 0 in every layer.
        let sp = sparsity_trace(&trace, None).unwrap();
        assert_eq!(sp.fractions[0], vec![0.0, 0.0]);
        assert!(sp
            .fractions
            .iter()
            .flatten()
            .all(|&f| (0.0..=1.0).contains(&f)));
        // Synthetic dense y.
        for v in trace.y[1][0].iter_mut() {
            *v = 1.0;
        }
        let sp = sparsity_trace(&trace, None).unwrap();
        assert_eq!(sp.fractions[1][0], 1.0);
    }

    #[test]
    fn buckets_partition_the_neurons() {
        let params = init_params(&cfg(), 4).unwrap();
        let (_, trace) = forward_parallel(&params, &[1, 2, 3, 4, 5], None).unwrap();
        let sp = sparsity_trace(&trace, Some((&params, 8))).unwrap();
        let bf = sp.bucket_fractions.unwrap();
        assert_eq!(bf.len(), 5);
        assert_eq!(bf[0].len(), 2);
        assert_eq!(bf[0][0].len(), 8);
        // Whole-layer fraction is the size-weighted mean of bucket fractions.
        let (assignment, _) = super::neuron_buckets(&params, 8);
        let mut sizes = vec![0usize; 8];
        for &b in &assignment {
            sizes[b] += 1;
        }
        for t in 0..5 {
            for l in 0..2 {
                let weighted: f64 = bf[t][l]
                    .iter()
                    .zip(&sizes)
                    .map(|(&f, &s)| f * s as f64)
                    .sum::<f64>()
                    / 32.0;
                assert!((weighted - sp.fractions[t][l]).abs() < 1e-12);
            }
        }
    }
}
