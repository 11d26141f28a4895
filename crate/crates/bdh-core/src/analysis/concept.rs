//! Monosemantic-synapse search: one-sided Mann-Whitney U separation of
//! end-of-sentence synapse values between concept and contrast texts.

use super::sigma::sigma_step;
use super::stats::{midranks, normal_sf};
use super::AnalysisError;
use crate::model::ModelParams;

/// One-sided rank test result (alternative: sample `a` tends higher).
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptTestResult {
    pub u: f64,
    pub u_max: f64,
    pub p_one_sided: f64,
    pub rank_biserial: f64,
}

/// Mann-Whitney U with midrank tie handling; the one-sided p uses the
/// normal approximation with tie-corrected variance and continuity
/// correction. rank_biserial = 2U/(n1 n2) - 1.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<ConceptTestResult, AnalysisError> {
    if a.is_empty() || b.is_empty() {
        return Err(AnalysisError::Argument("both samples must be non-empty".into()));
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    if pooled.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::Argument("samples must be finite".into()));
    }
    let ranks = midranks(&pooled);
    let r1: f64 = ranks[..a.len()].iter().sum();
    let u = r1 - n1 * (n1 + 1.0) / 2.0;
    let u_max = n1 * n2;

    // Tie correction: sum over tie groups of (t^3 - t).
    let mut sorted = pooled.clone();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let n = n1 + n2;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        // Every value identical across both samples.
        return Ok(ConceptTestResult {
            u,
            u_max,
            p_one_sided: 0.5,
            rank_biserial: 0.0,
        });
    }
    let mean = u_max / 2.0;
    let z = (u - mean - 0.5).max(-1e9) / var.sqrt();
    Ok(ConceptTestResult {
        u,
        u_max,
        p_one_sided: normal_sf(z),
        rank_biserial: 2.0 * u / u_max - 1.0,
    })
}

/// One scored candidate synapse.
#[derive(Debug, Clone)]
pub struct RankedSynapse {
    pub layer: usize,
    pub head: usize,
    pub i: usize,
    pub j: usize,
    pub result: ConceptTestResult,
    /// Median end-of-sentence value over the positive set (tie-break metric).
    pub median_positive: f64,
}

/// End-of-text synapse values for every candidate pair of one (layer, head),
/// computed per text by running the reconstruction over the whole text.
fn end_values_for_candidates(
    params: &ModelParams,
    texts: &[Vec<usize>],
    layer: usize,
    head: usize,
    candidates: &[(usize, usize)],
) -> Result<Vec<Vec<f64>>, AnalysisError> {
    let cfg = &params.config;
    let nh = cfg.nh();
    let freqs = params.rope_freqs_head(head);
    let gamma = cfg.head_gamma(head) as f64;
    let mut per_candidate = vec![Vec::with_capacity(texts.len()); candidates.len()];
    for text in texts {
        let (_, trace) = crate::model::forward_streaming_traced(params, text)?;
        let mut sigma = vec![0.0f64; nh * nh];
        for tau in 0..text.len() {
            let y: Vec<f64> = trace
                .y_head(tau, layer - 1, head)
                .iter()
                .map(|&v| v as f64)
                .collect();
            let x: Vec<f64> = trace
                .x_head(tau, layer, head)
                .iter()
                .map(|&v| v as f64)
                .collect();
            sigma_step(&mut sigma, nh, &y, &x, freqs, gamma);
        }
        // Read-out point: after the final byte of the text.
        for (slot, &(i, j)) in candidates.iter().enumerate() {
            per_candidate[slot].push(sigma[i * nh + j]);
        }
    }
    Ok(per_candidate)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Search for synapses whose end-of-sentence state separates the positive
/// texts from the contrast texts. Candidates are the pairs with the highest
/// activation co-occurrence counts, capped at `candidate_cap` per
/// (layer, head); results are ranked by rank-biserial correlation, ties
/// broken by the positive-set median value.
pub fn find_concept_synapses(
    params: &ModelParams,
    positive_texts: &[Vec<usize>],
    contrast_texts: &[Vec<usize>],
    top_k: usize,
    candidate_cap: usize,
) -> Result<Vec<RankedSynapse>, AnalysisError> {
    if positive_texts.is_empty() || contrast_texts.is_empty() {
        return Err(AnalysisError::Argument("both text sets must be non-empty".into()));
    }
    if top_k == 0 {
        return Ok(vec![]);
    }
    let cfg = &params.config;
    let nh = cfg.nh();
    let mut ranked = Vec::new();

    for layer in 1..cfg.layers {
        for head in 0..cfg.heads {
            // Co-occurrence counting over the positive texts.
            let mut cooc = vec![0u32; nh * nh];
            for text in positive_texts {
                let (_, trace) = crate::model::forward_streaming_traced(params, text)?;
                for tau in 0..text.len() {
                    let y = trace.y_head(tau, layer - 1, head);
                    let x = trace.x_head(tau, layer, head);
                    let active_y: Vec<usize> =
                        (0..nh).filter(|&i| y[i] > 0.0).collect();
                    let active_x: Vec<usize> =
                        (0..nh).filter(|&j| x[j] > 0.0).collect();
                    for &i in &active_y {
                        let row = &mut cooc[i * nh..(i + 1) * nh];
                        for &j in &active_x {
                            row[j] += 1;
                        }
                    }
                }
            }
            let mut order: Vec<usize> = (0..nh * nh).filter(|&k| cooc[k] > 0).collect();
            order.sort_unstable_by(|&a, &b| cooc[b].cmp(&cooc[a]));
            order.truncate(candidate_cap);
            if order.is_empty() {
                continue;
            }
            let candidates: Vec<(usize, usize)> =
                order.iter().map(|&k| (k / nh, k % nh)).collect();

            let pos_vals =
                end_values_for_candidates(params, positive_texts, layer, head, &candidates)?;
            let neg_vals =
                end_values_for_candidates(params, contrast_texts, layer, head, &candidates)?;
            for (slot, &(i, j)) in candidates.iter().enumerate() {
                let result = mann_whitney_u(&pos_vals[slot], &neg_vals[slot])?;
                ranked.push(RankedSynapse {
                    layer,
                    head,
                    i,
                    j,
                    median_positive: median(&pos_vals[slot]),
                    result,
                });
            }
        }
    }
    ranked.sort_by(|a, b| {
        b.result
            .rank_biserial
            .partial_cmp(&a.result.rank_biserial)
            .unwrap()
            .then(b.median_positive.partial_cmp(&a.median_positive).unwrap())
    });
    ranked.truncate(top_k);
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    /// Brute-force U: pairwise wins plus half-ties.
    fn exact_u(a: &[f64], b: &[f64]) -> f64 {
        let mut u = 0.0;
        for &x in a {
            for &y in b {
                if x > y {
                    u += 1.0;
                } else if x == y {
                    u += 0.5;
                }
            }
        }
        u
    }

    /// Exact one-sided permutation p-value for small pooled samples.
    fn exact_p(a: &[f64], b: &[f64]) -> f64 {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let n1 = a.len();
        let observed = exact_u(a, b);
        let idx: Vec<usize> = (0..pooled.len()).collect();
        let mut count = 0usize;
        let mut total = 0usize;
        // all n1-subsets
        fn combos(idx: &[usize], k: usize) -> Vec<Vec<usize>> {
            if k == 0 {
                return vec![vec![]];
            }
            if idx.len() < k {
                return vec![];
            }
            let mut out = Vec::new();
            for (pos, &first) in idx.iter().enumerate() {
                for mut rest in combos(&idx[pos + 1..], k - 1) {
                    let mut v = vec![first];
                    v.append(&mut rest);
                    out.push(v);
                }
            }
            out
        }
        for chosen in combos(&idx, n1) {
            let in_a: std::collections::HashSet<usize> = chosen.into_iter().collect();
            let sa: Vec<f64> = (0..pooled.len())
                .filter(|i| in_a.contains(i))
                .map(|i| pooled[i])
                .collect();
            let sb: Vec<f64> = (0..pooled.len())
                .filter(|i| !in_a.contains(i))
                .map(|i| pooled[i])
                .collect();
            if exact_u(&sa, &sb) >= observed {
                count += 1;
            }
            total += 1;
        }
        count as f64 / total as f64
    }

    #[test]
    fn u_matches_exhaustive_counting_up_to_size_8() {
        let mut rng = seeded(42);
        for trial in 0..200 {
            let n1 = rng.random_range(1..=8);
            let n2 = rng.random_range(1..=8);
            // Integer grid forces plenty of ties.
            let a: Vec<f64> = (0..n1).map(|_| rng.random_range(0..6) as f64).collect();
            let b: Vec<f64> = (0..n2).map(|_| rng.random_range(0..6) as f64).collect();
            let got = mann_whitney_u(&a, &b).unwrap();
            let want = exact_u(&a, &b);
            assert!(
                (got.u - want).abs() < 1e-9,
                "trial {trial}: U {} vs {want} for {a:?} {b:?}",
                got.u
            );
            assert!(got.u >= 0.0 && got.u <= got.u_max);
            let rb = 2.0 * got.u / got.u_max - 1.0;
            assert!((got.rank_biserial - rb).abs() < 1e-12);
        }
    }

    #[test]
    fn normal_p_close_to_exact_permutation_p() {
        let mut rng = seeded(7);
        for _ in 0..25 {
            let n1 = rng.random_range(3..=5);
            let n2 = rng.random_range(3..=5);
            let a: Vec<f64> = (0..n1).map(|_| rng.random_range(0.0..3.0)).collect();
            let b: Vec<f64> = (0..n2).map(|_| rng.random_range(0.0..3.0)).collect();
            let approx = mann_whitney_u(&a, &b).unwrap().p_one_sided;
            let exact = exact_p(&a, &b);
            assert!(
                (approx - exact).abs() <= 0.02 + 0.05 * exact.min(1.0 - exact),
                "p {approx} vs exact {exact} for {a:?} {b:?}"
            );
        }
    }

    #[test]
    fn complete_separation_is_u_max() {
        let a: Vec<f64> = (0..50).map(|i| 100.0 + i as f64).collect();
        let b: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        assert_eq!(r.u, 2500.0);
        assert_eq!(r.u_max, 2500.0);
        assert!((r.rank_biserial - 1.0).abs() < 1e-12);
        assert!(r.p_one_sided < 1e-15, "p = {}", r.p_one_sided);
    }

    #[test]
    fn paper_scale_example_is_overwhelmingly_significant() {
        // U = 2368 of U_max = 2500 at 50/50 without ties: p < 1e-14.
        // Build samples realizing exactly that U: 46 clean wins per early a,
        // arranged as b-block, then interleave to U = 2368.
        // Simpler: use the normal machinery directly on synthetic data with
        // the documented U by shifting 4 of 50 values below the b median.
        let mut a: Vec<f64> = (0..50).map(|i| 200.0 + i as f64).collect();
        let b: Vec<f64> = (0..50).map(|i| i as f64 * 2.0).collect();
        // Move four a-values between b's 17th and 18th order statistics:
        // each sheds 33 pairwise wins, 2500 - 4*33 = 2368.
        a[0] = 33.0;
        a[1] = 33.1;
        a[2] = 33.2;
        a[3] = 33.3;
        let r = mann_whitney_u(&a, &b).unwrap();
        assert_eq!(r.u, 2368.0, "constructed U");
        assert!(r.p_one_sided < 1e-14, "p = {}", r.p_one_sided);
        assert!((r.rank_biserial - (2.0 * 2368.0 / 2500.0 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn all_identical_values_are_uninformative() {
        let a = vec![1.0; 6];
        let b = vec![1.0; 9];
        let r = mann_whitney_u(&a, &b).unwrap();
        assert_eq!(r.p_one_sided, 0.5);
        assert_eq!(r.rank_biserial, 0.0);
        assert_eq!(r.u, 27.0); // n1 n2 / 2
    }

    #[test]
    fn small_hand_case() {
        let r = mann_whitney_u(&[1.0, 2.0], &[0.0]).unwrap();
        assert_eq!(r.u, 2.0);
        assert_eq!(r.rank_biserial, 1.0);
    }
}
