//! Feed-forward graph extraction, thresholding, element histograms, and
//! degree distributions.

use super::AnalysisError;
use crate::kernel::SparseGraph;
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderKind {
    X,
    Y,
}

/// The (head_a rows, head_b columns) block of the neuron-neuron product
/// D*E for the chosen decoder, as a dense row-major (n/h)^2 matrix in f64.
pub fn extract_ffn_graph(
    params: &ModelParams,
    head_a: usize,
    head_b: usize,
    which: DecoderKind,
) -> Result<Vec<f64>, AnalysisError> {
    let cfg = &params.config;
    if head_a >= cfg.heads || head_b >= cfg.heads {
        return Err(AnalysisError::Index(format!(
            "head pair ({head_a},{head_b}) for {} heads",
            cfg.heads
        )));
    }
    let (d, nh) = (cfg.d, cfg.nh());
    let dec = match which {
        DecoderKind::X => params.decoder_x_head(head_a),
        DecoderKind::Y => params.decoder_y_head(head_a),
    };
    let enc = params.encoder.data();
    let col_base = head_b * nh;
    let mut g = vec![0.0f64; nh * nh];
    for i in 0..nh {
        for j in 0..nh {
            let mut acc = 0.0f64;
            let enc_row = &enc[(col_base + j) * d..(col_base + j + 1) * d];
            for (a, &e) in enc_row.iter().enumerate() {
                // paper D(i, a) = dec[a * nh + i]; paper E(a, j) = enc[j, a]up to head offset
                acc += dec[a * nh + i] as f64 * e as f64;
            }
            g[i * nh + j] = acc;
        }
    }
    Ok(g)
}

/// Keep entries >= beta as a sparse directed graph.
pub fn threshold_graph(g: &[f64], n: usize, beta: f64) -> Result<SparseGraph, AnalysisError> {
    if g.len() != n * n {
        return Err(AnalysisError::Argument(format!(
            "matrix of {} entries is not {n}x{n}",
            g.len()
        )));
    }
    if beta < 0.0 {
        return Err(AnalysisError::Argument("beta must be >= 0".into()));
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let w = g[i * n + j];
            if w >= beta && w != 0.0 {
                edges.push((i, j, w));
            }
        }
    }
    Ok(SparseGraph { n, edges })
}

/// Histogram of matrix entries over symmetric bins, with the symmetric part
/// min(f(x), f(-x)) and the skew f(x) - symmetric.
#[derive(Debug, Clone)]
pub struct ElementHistogram {
    /// bins + 1 edges, symmetric around zero.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub symmetric: Vec<f64>,
    pub skew: Vec<f64>,
}

pub fn element_histogram(g: &[f64], bins: usize) -> Result<ElementHistogram, AnalysisError> {
    if bins < 10 {
        return Err(AnalysisError::Argument("need at least 10 bins".into()));
    }
    let bins = bins + bins % 2; // even, so every bin has an exact mirror
    let max_abs = g.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let lo = -max_abs;
    let width = 2.0 * max_abs / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| lo + k as f64 * width).collect();
    let mut counts = vec![0u64; bins];
    for &v in g {
        let mut k = ((v - lo) / width) as usize;
        if k >= bins {
            k = bins - 1;
        }
        counts[k] += 1;
    }
    let symmetric: Vec<f64> = (0..bins)
        .map(|k| counts[k].min(counts[bins - 1 - k]) as f64)
        .collect();
    let skew: Vec<f64> = (0..bins)
        .map(|k| counts[k] as f64 - symmetric[k])
        .collect();
    Ok(ElementHistogram { edges, counts, symmetric, skew })
}

#[derive(Debug, Clone)]
pub struct LogBin {
    pub lo: usize,
    pub hi: usize,
    /// Count per unit degree inside the bin.
    pub in_density: f64,
    pub out_density: f64,
}

#[derive(Debug, Clone)]
pub struct DegreeDistribution {
    /// (degree, node count), ascending, zero-count degrees omitted.
    pub in_hist: Vec<(usize, usize)>,
    pub out_hist: Vec<(usize, usize)>,
    /// Factor-2 logarithmic bins for tail plots.
    pub log_binned: Vec<LogBin>,
}

/// Unweighted in/out-degree histograms of a directed graph.
pub fn degree_distribution(g: &SparseGraph) -> DegreeDistribution {
    let mut din = vec![0usize; g.n];
    let mut dout = vec![0usize; g.n];
    for &(i, j, _) in &g.edges {
        dout[i] += 1;
        din[j] += 1;
    }
    let hist = |deg: &[usize]| {
        let mut map = std::collections::BTreeMap::new();
        for &d in deg {
            *map.entry(d).or_insert(0usize) += 1;
        }
        map.into_iter().collect::<Vec<_>>()
    };
    let max_deg = din.iter().chain(dout.iter()).copied().max().unwrap_or(0);
    let mut log_binned = Vec::new();
    let mut lo = 1usize;
    while lo <= max_deg {
        let hi = lo * 2;
        let count = |deg: &[usize]| deg.iter().filter(|&&d| d >= lo && d < hi).count() as f64;
        log_binned.push(LogBin {
            lo,
            hi,
            in_density: count(&din) / (hi - lo) as f64,
            out_density: count(&dout) / (hi - lo) as f64,
        });
        lo = hi;
    }
    DegreeDistribution {
        in_hist: hist(&din),
        out_hist: hist(&dout),
        log_binned,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};
    use crate::rng::seeded;
    use rand::Rng;

    fn cfg() -> ModelConfig {
        ModelConfig {
            n: 32,
            d: 4,
            layers: 2,
            heads: 2,
            vocab_size: 7,
            dropout: 0.0,
            rope_wavelength_range: (2.0, 32.0),
            alibi_gamma: 1.0,
            eps: 1e-5,
        }
    }

    #[test]
    fn ffn_blocks_partition_the_full_product() {
        let params = init_params(&cfg(), 1).unwrap();
        let nh = 16;
        // Sum of all block sums equals the full-matrix sum.
        let mut block_total = 0.0f64;
        for a in 0..2 {
            for b in 0..2 {
                let g = extract_ffn_graph(&params, a, b, DecoderKind::X).unwrap();
                block_total += g.iter().sum::<f64>();
            }
        }
        let mut full_total = 0.0f64;
        let enc = params.encoder.data();
        for head_a in 0..2usize {
            let dec = params.decoder_x_head(head_a);
            for i in 0..nh {
                for j_global in 0..32 {
                    let mut acc = 0.0f64;
                    for al in 0..4 {
                        acc += dec[al * nh + i] as f64 * enc[j_global * 4 + al] as f64;
                    }
                    full_total += acc;
                }
            }
        }
        assert!((block_total - full_total).abs() < 1e-6);
    }

    #[test]
    fn ffn_block_matches_direct_slice() {
        let params = init_params(&cfg(), 2).unwrap();
        let g = extract_ffn_graph(&params, 1, 0, DecoderKind::Y).unwrap();
        let nh = 16;
        let dec = params.decoder_y_head(1);
        let enc = params.encoder.data();
        for i in 0..nh {
            for j in 0..nh {
                let mut acc = 0.0f64;
                for al in 0..4 {
                    acc += dec[al * nh + i] as f64 * enc[j * 4 + al] as f64;
                }
                assert!((acc - g[i * nh + j]).abs() < 1e-6);
            }
        }
        assert!(extract_ffn_graph(&params, 2, 0, DecoderKind::X).is_err());
    }

    #[test]
    fn threshold_keeps_and_drops_as_specified() {
        let g = vec![0.5, 0.0, -1.0, 2.0];
        let all = threshold_graph(&g, 2, 0.0).unwrap();
        // beta = 0 keeps all non-zero entries that are >= 0.
        assert_eq!(all.edge_count(), 2);
        let none = threshold_graph(&g, 2, 3.0).unwrap();
        assert_eq!(none.edge_count(), 0);
        assert!(threshold_graph(&g, 2, -0.1).is_err());
    }

    #[test]
    fn histogram_counts_sum_and_skew_sign() {
        let mut rng = seeded(3);
        let g: Vec<f64> = (0..200_000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = element_histogram(&g, 40).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), 200_000);
        assert!(h.skew.iter().all(|&v| v >= 0.0));
        // Near-symmetric input: skew mass under 2%.
        let skew_mass: f64 = h.skew.iter().sum();
        assert!(skew_mass / 200_000.0 < 0.02, "skew mass {skew_mass}");
    }

    #[test]
    fn histogram_detects_positive_tail() {
        let mut rng = seeded(4);
        let mut g: Vec<f64> = (0..10_000).map(|_| rng.random_range(-0.2..0.2)).collect();
        for k in 0..500 {
            g[k] = 1.0 + rng.random_range(0.0..0.5);
        }
        let h = element_histogram(&g, 50).unwrap();
        let skew_mass: f64 = h.skew.iter().sum();
        assert!(skew_mass >= 499.0, "tail not seen: {skew_mass}");
    }

    #[test]
    fn degree_hists_satisfy_handshake() {
        let mut rng = seeded(5);
        let mut edges = Vec::new();
        for i in 0..20usize {
            for j in 0..20usize {
                if i != j && rng.random::<f64>() < 0.2 {
                    edges.push((i, j, 1.0));
                }
            }
        }
        let m = edges.len();
        let g = SparseGraph::new(20, edges).unwrap();
        let dd = degree_distribution(&g);
        let sum = |h: &[(usize, usize)]| h.iter().map(|&(d, c)| d * c).sum::<usize>();
        assert_eq!(sum(&dd.in_hist), m);
        assert_eq!(sum(&dd.out_hist), m);
    }

    #[test]
    fn degree_point_masses() {
        // 3-regular directed ring union: every node has in=out=3.
        let n = 12;
        let mut edges = Vec::new();
        for i in 0..n {
            for k in 1..=3 {
                edges.push((i, (i + k) % n, 1.0));
            }
        }
        let g = SparseGraph::new(n, edges).unwrap();
        let dd = degree_distribution(&g);
        assert_eq!(dd.in_hist, vec![(3, n)]);
        assert_eq!(dd.out_hist, vec![(3, n)]);

        // star: hub 0 -> all others
        let star_edges: Vec<_> = (1..n).map(|j| (0usize, j, 1.0)).collect();
        let star = SparseGraph::new(n, star_edges).unwrap();
        let dd = degree_distribution(&star);
        assert_eq!(dd.out_hist, vec![(0, n - 1), (n - 1, 1)]);
        assert_eq!(dd.in_hist, vec![(0, 1), (1, n - 1)]);
    }
}
