//! Seeded synthetic graph generators used as desk-scale benchmark stand-ins.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Directed G(n, q) via geometric gap sampling over the n*(n-1) ordered
/// non-diagonal pairs, with q chosen so the expected edge count is
/// `n * avg_degree`. Equivalent to an independent Bernoulli(q) draw per pair,
/// but O(E) instead of O(n^2).
pub fn erdos_renyi(n: usize, avg_degree: f64, seed: u64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    if n < 2 || avg_degree <= 0.0 {
        return edges;
    }
    let q = (avg_degree / (n - 1) as f64).min(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = (n * (n - 1)) as u64;
    if q >= 1.0 {
        for idx in 0..total {
            edges.push(pair_from_index(idx, n));
        }
        return edges;
    }
    let log1mq = (1.0 - q).ln();
    let mut idx: i64 = -1;
    loop {
        // Gap ~ Geometric(q): number of skipped pairs before the next edge.
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let gap = (u.ln() / log1mq).floor() as i64;
        idx += 1 + gap;
        if idx as u64 >= total {
            break;
        }
        edges.push(pair_from_index(idx as u64, n));
    }
    edges
}

fn pair_from_index(idx: u64, n: usize) -> (usize, usize) {
    let row = (idx / (n as u64 - 1)) as usize;
    let k = (idx % (n as u64 - 1)) as usize;
    let col = if k < row { k } else { k + 1 };
    (row, col)
}

/// Preferential-attachment graph with a heavy-tailed in-degree distribution.
///
/// Each node beyond the seed set emits `m = round(avg_degree)` edges to
/// distinct earlier nodes, chosen proportionally to current degree. The seed
/// nodes form a directed ring.
pub fn power_law(n: usize, avg_degree: f64, seed: u64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    let m = avg_degree.round() as usize;
    if n < 2 || m == 0 {
        return edges;
    }
    let m = m.min(n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seed_count = (m + 1).min(n);
    // Endpoint pool: each occurrence is one unit of degree mass.
    let mut pool: Vec<usize> = Vec::new();
    for v in 0..seed_count {
        let w = (v + 1) % seed_count;
        if v != w {
            edges.push((v, w));
            pool.push(v);
            pool.push(w);
        }
    }
    for v in seed_count..n {
        let mut targets = Vec::with_capacity(m);
        while targets.len() < m {
            let t = pool[rng.gen_range(0..pool.len())];
            if t != v && !targets.contains(&t) {
                targets.push(t);
            }
        }
        for &t in &targets {
            edges.push((v, t));
            pool.push(v);
            pool.push(t);
        }
    }
    edges
}

/// (max out-degree, mean out-degree) of an edge list over `n` nodes.
pub fn degree_stats(n: usize, edges: &[(usize, usize)]) -> (usize, f64) {
    let mut deg = vec![0usize; n];
    for &(s, _) in edges {
        deg[s] += 1;
    }
    let max = deg.iter().copied().max().unwrap_or(0);
    let mean = if n == 0 { 0.0 } else { edges.len() as f64 / n as f64 };
    (max, mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_degree_gives_empty_edge_set() {
        assert!(erdos_renyi(10, 0.0, 1).is_empty());
        assert!(power_law(10, 0.0, 1).is_empty());
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        assert_eq!(erdos_renyi(50, 4.0, 99), erdos_renyi(50, 4.0, 99));
        assert_eq!(power_law(50, 3.0, 99), power_law(50, 3.0, 99));
    }

    #[test]
    fn erdos_renyi_edge_count_within_three_sigma() {
        let n = 1000;
        let avg = 10.0;
        let edges = erdos_renyi(n, avg, 7);
        let expect = n as f64 * avg;
        let q = avg / (n - 1) as f64;
        let sigma = ((n * (n - 1)) as f64 * q * (1.0 - q)).sqrt();
        let diff = (edges.len() as f64 - expect).abs();
        assert!(diff < 3.0 * sigma, "E={} expected {expect} sigma {sigma}", edges.len());
    }

    #[test]
    fn generated_edges_are_valid_and_duplicate_free() {
        for (name, edges) in [
            ("er", erdos_renyi(40, 5.0, 3)),
            ("pl", power_law(40, 3.0, 3)),
        ] {
            let mut seen = std::collections::HashSet::new();
            for &(s, d) in &edges {
                assert!(s < 40 && d < 40, "{name}: edge out of range");
                assert!(s != d, "{name}: self loop");
                assert!(seen.insert((s, d)), "{name}: duplicate edge ({s}, {d})");
            }
        }
    }

    #[test]
    fn power_law_has_skewed_in_degree() {
        let n = 300;
        let edges = power_law(n, 3.0, 5);
        let mut indeg = vec![0usize; n];
        for &(_, d) in &edges {
            indeg[d] += 1;
        }
        let max_in = *indeg.iter().max().unwrap();
        let mean_in = edges.len() as f64 / n as f64;
        // Hubs should far exceed the mean.
        assert!(max_in as f64 > 4.0 * mean_in, "max {max_in} mean {mean_in}");
    }
}
