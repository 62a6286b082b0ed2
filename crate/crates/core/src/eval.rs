//! Zero-shot evaluation: Recall@K retrieval, k-means and NMI.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{check_dims, sq_dist};
use crate::{seeded_rng, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub recall_at: BTreeMap<usize, f64>,
    pub num_queries: usize,
}

/// For every query, ranks all other points by squared distance (ties by
/// index) and counts a hit at `k` if a same-class point is among the first
/// `k`.
pub fn recall_at_k(embeddings: &[Vec<f64>], labels: &[usize], ks: &[usize]) -> Result<RetrievalResult> {
    let n = embeddings.len();
    check_dims(n, labels.len())?;
    if n < 2 {
        return Err(Error::config("recall needs at least 2 points"));
    }
    let gallery = n - 1;
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > gallery) {
        return Err(Error::config(format!("k = {k} is outside 1..={gallery} (gallery size)")));
    }
    let dim = embeddings[0].len();
    for e in embeddings {
        check_dims(dim, e.len())?;
    }
    // Rank of the best same-class gallery point; `None` when the class is a
    // singleton.
    let ranks: Vec<Option<usize>> = (0..n)
        .map(|q| {
            let d: Vec<f64> = embeddings.iter().map(|e| sq_dist(&embeddings[q], e)).collect();
            let best = (0..n)
                .filter(|&j| j != q && labels[j] == labels[q])
                .min_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)))?;
            Some(
                (0..n)
                    .filter(|&j| j != q && (d[j], j) < (d[best], best))
                    .count(),
            )
        })
        .collect();
    let recall_at = ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|r| r.is_some_and(|r| r < k)).count();
            (k, hits as f64 / n as f64)
        })
        .collect();
    Ok(RetrievalResult {
        recall_at,
        num_queries: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after every Lloyd assignment pass.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(point, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp_seed(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // Never pick a zero-weight point through rounding at the tail.
            if d2[chosen] == 0.0 {
                chosen = (0..n).rev().find(|&i| d2[i] > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[pick].clone());
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// Lloyd's algorithm from k-means++ seeding. Empty clusters are re-seeded
/// with the point farthest from its centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Result<KMeansResult> {
    if k < 1 {
        return Err(Error::config("k-means needs K >= 1"));
    }
    let n = points.len();
    if k > n {
        return Err(Error::config(format!("K = {k} exceeds the number of points {n}")));
    }
    let dim = points[0].len();
    for p in points {
        check_dims(dim, p.len())?;
    }
    let mut rng = seeded_rng(seed);
    let mut centroids = kmeans_pp_seed(points, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut inertia_trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
            dists[i] = d;
        }
        inertia_trace.push(dists.iter().sum());
        if !changed && iterations > 1 {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignments) {
            counts[c] += 1;
            sums[c].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                let far = (0..n).max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a))).unwrap_or(0);
                centroids[c] = points[far].clone();
                dists[far] = 0.0;
            }
        }
    }
    for (i, p) in points.iter().enumerate() {
        let (c, d) = nearest(p, &centroids);
        assignments[i] = c;
        dists[i] = d;
    }
    Ok(KMeansResult {
        assignments,
        centroids,
        inertia: dists.iter().sum(),
        inertia_trace,
        iterations,
    })
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `2 I(Ω, C) / (H(Ω) + H(C))` with natural logs; 1 when both entropies are
/// zero.
pub fn nmi(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    if assignments.len() != labels.len() {
        return Err(Error::Usage(format!(
            "NMI inputs differ in length ({} vs {})",
            assignments.len(),
            labels.len()
        )));
    }
    if assignments.is_empty() {
        return Err(Error::Usage("NMI of empty inputs".into()));
    }
    let n = assignments.len() as f64;
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut a_counts: HashMap<usize, usize> = HashMap::new();
    let mut b_counts: HashMap<usize, usize> = HashMap::new();
    for (&a, &b) in assignments.iter().zip(labels) {
        *joint.entry((a, b)).or_default() += 1;
        *a_counts.entry(a).or_default() += 1;
        *b_counts.entry(b).or_default() += 1;
    }
    let h_a = entropy(a_counts.values().copied(), n);
    let h_b = entropy(b_counts.values().copied(), n);
    if h_a + h_b == 0.0 {
        return Ok(1.0);
    }
    // Sum in a fixed key order so the result does not depend on hash order.
    let mut cells: Vec<_> = joint.into_iter().collect();
    cells.sort_unstable();
    let mi: f64 = cells
        .iter()
        .map(|&((a, b), c)| {
            let c = c as f64;
            let (ca, cb) = (a_counts[&a] as f64, b_counts[&b] as f64);
            (c / n) * (n * c / (ca * cb)).ln()
        })
        .sum();
    Ok((2.0 * mi / (h_a + h_b)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub assignments: Vec<usize>,
    pub nmi: f64,
    pub kmeans_inertia: f64,
}

/// k-means with K = number of distinct classes, scored by NMI.
pub fn cluster_and_score(embeddings: &[Vec<f64>], labels: &[usize], seed: u64, max_iters: usize) -> Result<ClusteringResult> {
    let k = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
    let km = kmeans(embeddings, k, seed, max_iters)?;
    let nmi = nmi(&km.assignments, labels)?;
    Ok(ClusteringResult {
        assignments: km.assignments,
        nmi,
        kmeans_inertia: km.inertia,
    })
}

/// Evaluation report written by `eval` and embedded in training metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall_at: BTreeMap<usize, f64>,
    pub nmi: f64,
    pub epsilon: Option<f64>,
    pub num_queries: usize,
    pub kmeans_inertia: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_clusters_have_perfect_recall() {
        let e = vec![vec![0.0], vec![0.1], vec![10.0], vec![10.1]];
        let r = recall_at_k(&e, &[0, 0, 1, 1], &[1]).unwrap();
        assert_eq!(r.recall_at[&1], 1.0);
    }

    #[test]
    fn singleton_classes_have_zero_recall() {
        let e: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let r = recall_at_k(&e, &[0, 1, 2, 3, 4], &[1, 2, 4]).unwrap();
        assert!(r.recall_at.values().all(|&v| v == 0.0));
    }

    #[test]
    fn recall_rejects_k_past_gallery() {
        let e = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert!(recall_at_k(&e, &[0, 0, 1], &[3]).is_err());
        assert!(recall_at_k(&e, &[0, 0, 1], &[2]).is_ok());
        assert!(recall_at_k(&e, &[0, 0, 1], &[0]).is_err());
    }

    #[test]
    fn recall_ties_go_to_lower_index() {
        // Query 0 at 0; points 1 (class 1) and 2 (class 0) both at distance 1.
        let e = vec![vec![0.0], vec![1.0], vec![-1.0]];
        let r = recall_at_k(&e, &[0, 1, 0], &[1]).unwrap();
        // q0 misses (index 1 wins the tie), q1 has no same-class, q2 -> 0 hit.
        assert!((r.recall_at[&1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn kmeans_k_equals_n() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let r = kmeans(&pts, 6, 0, 50).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut a = r.assignments.clone();
        a.sort();
        a.dedup();
        assert_eq!(a.len(), 6);
    }

    #[test]
    fn kmeans_single_cluster_uses_mean() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![1.0, 3.0]];
        let r = kmeans(&pts, 1, 0, 50).unwrap();
        assert!((r.centroids[0][0] - 1.0).abs() < 1e-15);
        assert!((r.centroids[0][1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn kmeans_recovers_two_blobs() {
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for i in 0..20 {
            let c = i % 2;
            pts.push(vec![c as f64 * 50.0 + (i as f64 * 0.37).sin(), (i as f64 * 0.91).cos()]);
            truth.push(c);
        }
        let r = kmeans(&pts, 2, 7, 100).unwrap();
        assert_eq!(nmi(&r.assignments, &truth).unwrap(), 1.0);
    }

    #[test]
    fn kmeans_errors() {
        assert!(kmeans(&[vec![0.0]], 0, 0, 10).is_err());
        assert!(kmeans(&[vec![0.0]], 2, 0, 10).is_err());
    }

    #[test]
    fn nmi_endpoints() {
        assert_eq!(nmi(&[0, 0, 1, 1, 2], &[0, 0, 1, 1, 2]).unwrap(), 1.0);
        assert_eq!(nmi(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap(), 0.0);
        assert_eq!(nmi(&[3, 3], &[1, 1]).unwrap(), 1.0);
        assert!(matches!(nmi(&[0], &[0, 1]), Err(Error::Usage(_))));
    }

    #[test]
    fn nmi_six_point_contingency() {
        // Ω = {0,1,2},{3,4,5}; C = {0,1},{2,3},{4,5}.
        // Contingency: row0 = [2,1,0], row1 = [0,1,2].
        // I = 2·(2/6)ln(6·2/(3·2)) + 2·(1/6)ln(6·1/(3·2)) = (2/3) ln 2
        // H(Ω) = ln 2, H(C) = ln 3
        let expected = 2.0 * (2.0 / 3.0) * 2f64.ln() / (2f64.ln() + 3f64.ln());
        let got = nmi(&[0, 0, 0, 1, 1, 1], &[0, 0, 1, 1, 2, 2]).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }
}
