//! Newman modularity on weighted directed graphs, greedy (Louvain-style)
//! maximization, and matched random baselines.

use super::AnalysisError;
use crate::kernel::SparseGraph;
use crate::rng::{seeded, SeededRng};
use rand::seq::SliceRandom;
use rand::Rng;

/// Q = sum_c [ w_in(c)/w - S_out(c) S_in(c)/w^2 ] on the weighted digraph,
/// where w is total edge weight and S are weighted degrees. Undirected
/// inputs fall out as the symmetric special case.
pub fn modularity(g: &SparseGraph, partition: &[usize]) -> Result<f64, AnalysisError> {
    if partition.len() != g.n {
        return Err(AnalysisError::Argument(format!(
            "partition covers {} nodes, graph has {}",
            partition.len(),
            g.n
        )));
    }
    let n_comm = partition.iter().copied().max().map_or(0, |m| m + 1);
    let mut w_in = vec![0.0f64; n_comm];
    let mut s_out = vec![0.0f64; n_comm];
    let mut s_in = vec![0.0f64; n_comm];
    let mut w = 0.0f64;
    for &(i, j, wt) in &g.edges {
        w += wt;
        s_out[partition[i]] += wt;
        s_in[partition[j]] += wt;
        if partition[i] == partition[j] {
            w_in[partition[i]] += wt;
        }
    }
    if w == 0.0 {
        return Ok(0.0);
    }
    let mut q = 0.0;
    for c in 0..n_comm {
        q += w_in[c] / w - (s_out[c] * s_in[c]) / (w * w);
    }
    Ok(q)
}

struct WorkGraph {
    n: usize,
    out: Vec<Vec<(usize, f64)>>,
    inc: Vec<Vec<(usize, f64)>>,
    s_out: Vec<f64>,
    s_in: Vec<f64>,
    w: f64,
    /// Which original nodes each supernode contains.
    members: Vec<Vec<usize>>,
}

impl WorkGraph {
    fn from_sparse(g: &SparseGraph) -> Self {
        let mut out = vec![vec![]; g.n];
        let mut inc = vec![vec![]; g.n];
        let mut s_out = vec![0.0; g.n];
        let mut s_in = vec![0.0; g.n];
        let mut w = 0.0;
        for &(i, j, wt) in &g.edges {
            out[i].push((j, wt));
            inc[j].push((i, wt));
            s_out[i] += wt;
            s_in[j] += wt;
            w += wt;
        }
        WorkGraph {
            n: g.n,
            out,
            inc,
            s_out,
            s_in,
            w,
            members: (0..g.n).map(|i| vec![i]).collect(),
        }
    }

    /// One pass of greedy local moves; returns the total modularity gain.
    fn local_moves(&self, comm: &mut [usize], rng: &mut SeededRng) -> f64 {
        let mut sigma_out = vec![0.0f64; self.n];
        let mut sigma_in = vec![0.0f64; self.n];
        for v in 0..self.n {
            sigma_out[comm[v]] += self.s_out[v];
            sigma_in[comm[v]] += self.s_in[v];
        }
        let mut order: Vec<usize> = (0..self.n).collect();
        order.shuffle(rng);
        let w = self.w;
        let mut total_gain = 0.0;
        let mut links: std::collections::HashMap<usize, f64> = Default::default();
        for &v in &order {
            let old = comm[v];
            // weight from v to each neighboring community (both directions),
            // excluding self-loops
            links.clear();
            for &(j, wt) in &self.out[v] {
                if j != v {
                    *links.entry(comm[j]).or_insert(0.0) += wt;
                }
            }
            for &(i, wt) in &self.inc[v] {
                if i != v {
                    *links.entry(comm[i]).or_insert(0.0) += wt;
                }
            }
            // take v out of its community
            sigma_out[old] -= self.s_out[v];
            sigma_in[old] -= self.s_in[v];
            let gain_of = |c: usize, k_vc: f64| {
                k_vc / w
                    - (self.s_out[v] * sigma_in[c] + self.s_in[v] * sigma_out[c]) / (w * w)
            };
            let stay = gain_of(old, links.get(&old).copied().unwrap_or(0.0));
            let mut best_c = old;
            let mut best_gain = stay;
            for (&c, &k_vc) in links.iter() {
                if c == old {
                    continue;
                }
                let gain = gain_of(c, k_vc);
                if gain > best_gain + 1e-15 {
                    best_gain = gain;
                    best_c = c;
                }
            }
            sigma_out[best_c] += self.s_out[v];
            sigma_in[best_c] += self.s_in[v];
            comm[v] = best_c;
            if best_c != old {
                total_gain += best_gain - stay;
            }
        }
        total_gain
    }

    /// Collapse communities into supernodes.
    fn aggregate(&self, comm: &[usize]) -> WorkGraph {
        let mut relabel = vec![usize::MAX; self.n];
        let mut next = 0;
        for &c in comm {
            if relabel[c] == usize::MAX {
                relabel[c] = next;
                next += 1;
            }
        }
        let mut edges: std::collections::HashMap<(usize, usize), f64> = Default::default();
        for v in 0..self.n {
            for &(j, wt) in &self.out[v] {
                *edges.entry((relabel[comm[v]], relabel[comm[j]])).or_insert(0.0) += wt;
            }
        }
        let mut out = vec![vec![]; next];
        let mut inc = vec![vec![]; next];
        let mut s_out = vec![0.0; next];
        let mut s_in = vec![0.0; next];
        let mut sorted: Vec<((usize, usize), f64)> = edges.into_iter().collect();
        sorted.sort_unstable_by_key(|&((a, b), _)| (a, b));
        for ((a, b), wt) in sorted {
            out[a].push((b, wt));
            inc[b].push((a, wt));
            s_out[a] += wt;
            s_in[b] += wt;
        }
        let mut members = vec![vec![]; next];
        for v in 0..self.n {
            let c = relabel[comm[v]];
            members[c].extend_from_slice(&self.members[v]);
        }
        WorkGraph { n: next, out, inc, s_out, s_in, w: self.w, members }
    }
}

/// Greedy modularity maximization (local moves + aggregation passes),
/// repeated over `n_seeds` shuffled runs; the best partition wins. The
/// returned Q is a lower bound on the graph's true modularity.
pub fn louvain(
    g: &SparseGraph,
    n_seeds: usize,
    base_seed: u64,
) -> Result<(Vec<usize>, f64), AnalysisError> {
    if g.edges.is_empty() {
        return Err(AnalysisError::Argument("louvain needs a non-empty graph".into()));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for s in 0..n_seeds.max(1) {
        let mut rng = seeded(base_seed.wrapping_add(s as u64));
        let mut work = WorkGraph::from_sparse(g);
        let mut full_partition: Vec<usize> = (0..g.n).collect();
        loop {
            let mut comm: Vec<usize> = (0..work.n).collect();
            let mut pass_gain = 0.0;
            loop {
                let gain = work.local_moves(&mut comm, &mut rng);
                pass_gain += gain;
                if gain < 1e-7 {
                    break;
                }
            }
            let aggregated = work.aggregate(&comm);
            // Map original nodes onto the new supernode ids.
            for (super_id, members) in aggregated.members.iter().enumerate() {
                for &orig in members {
                    full_partition[orig] = super_id;
                }
            }
            let done = aggregated.n == work.n || pass_gain < 1e-7;
            work = aggregated;
            if done {
                break;
            }
        }
        let q = modularity(g, &full_partition)?;
        if best.as_ref().is_none_or(|(_, bq)| q > *bq) {
            best = Some((full_partition, q));
        }
    }
    let (partition, q) = best.expect("at least one seed ran");
    // The search space includes the all-singletons partition; never return
    // something worse than it.
    let singleton: Vec<usize> = (0..g.n).collect();
    let q_single = modularity(g, &singleton)?;
    if q_single > q {
        return Ok((singleton, q_single));
    }
    Ok((partition, q))
}

#[derive(Debug, Clone)]
pub struct ModularityReport {
    pub beta: f64,
    pub m: usize,
    pub q: f64,
    pub q_gnm: f64,
    pub q_lowrank: f64,
    pub partition: Vec<usize>,
}

/// Matched random baselines: a uniform m-edge digraph, and a standard-normal
/// low-rank product thresholded (by bisection) at the beta' giving m edges.
/// Returns the graphs and the located beta'.
pub fn random_baseline_graphs(
    n: usize,
    m: usize,
    d: usize,
    seed: u64,
) -> Result<(SparseGraph, SparseGraph, f64), AnalysisError> {
    if m > n * n {
        return Err(AnalysisError::Argument(format!("m = {m} exceeds n^2 = {}", n * n)));
    }
    let mut rng = seeded(seed);
    // G(n, m): sample distinct ordered pairs without self-loops.
    let mut chosen = std::collections::HashSet::with_capacity(m);
    let mut gnm_edges = Vec::with_capacity(m);
    while gnm_edges.len() < m {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i != j && chosen.insert((i, j)) {
            gnm_edges.push((i, j, 1.0));
        }
    }
    let gnm = SparseGraph { n, edges: gnm_edges };

    // Low-rank product P1 P2^T with standard normal factors.
    let mut p1 = vec![0.0f64; n * d];
    let mut p2 = vec![0.0f64; n * d];
    let normal = rand_distr::StandardNormal;
    for v in p1.iter_mut().chain(p2.iter_mut()) {
        *v = rng.sample::<f64, _>(normal);
    }
    let mut product = vec![0.0f64; n * n];
    unsafe {
        matrixmultiply::dgemm(
            n,
            d,
            n,
            1.0,
            p1.as_ptr(),
            d as isize,
            1,
            p2.as_ptr(),
            1,
            d as isize,
            0.0,
            product.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    let count_at = |beta: f64| product.iter().filter(|&&v| v >= beta).count();
    let mut lo = 0.0f64;
    let mut hi = product.iter().cloned().fold(0.0f64, f64::max) + 1.0;
    // Bisect on beta' until the edge count hits m (ties permitting).
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if count_at(mid) > m {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let beta_prime = hi;
    let mut lr_edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let w = product[i * n + j];
            if w >= beta_prime {
                lr_edges.push((i, j, w));
            }
        }
    }
    Ok((gnm, SparseGraph { n, edges: lr_edges }, beta_prime))
}

/// Directed stochastic block model with `k` planted blocks.
pub fn sbm_graph(
    n: usize,
    k: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> (SparseGraph, Vec<usize>) {
    let mut rng = seeded(seed);
    let labels: Vec<usize> = (0..n).map(|i| i * k / n).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j, 1.0));
            }
        }
    }
    (SparseGraph { n, edges }, labels)
}

/// Fraction of nodes whose found community maps (by majority vote) onto
/// their true block.
pub fn partition_agreement(found: &[usize], truth: &[usize]) -> f64 {
    use std::collections::HashMap;
    let mut votes: HashMap<usize, HashMap<usize, usize>> = HashMap::new();
    for (&f, &t) in found.iter().zip(truth) {
        *votes.entry(f).or_default().entry(t).or_insert(0) += 1;
    }
    let mapping: HashMap<usize, usize> = votes
        .into_iter()
        .map(|(f, counts)| {
            let best = counts.into_iter().max_by_key(|&(_, c)| c).unwrap().0;
            (f, best)
        })
        .collect();
    let hits = found
        .iter()
        .zip(truth)
        .filter(|&(f, t)| mapping[f] == *t)
        .count();
    hits as f64 / truth.len() as f64
}
