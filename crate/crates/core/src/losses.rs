//! Losses over already-embedded vectors, with analytic gradients.
//!
//! Distances are squared Euclidean throughout. The NCA denominator sums over
//! the negatives only, so the NCA value can go below zero.

use serde::{Deserialize, Serialize};

use crate::linalg::{self, check_dims, sq_dist};
use crate::{Error, Result};

/// Loss value plus gradients for each argument group.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negatives: Vec<Vec<f64>>,
}

/// Nonnegative finite triplet margin.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Margin(f64);

impl Margin {
    pub fn new(m: f64) -> Result<Self> {
        if m.is_finite() && m >= 0.0 {
            Ok(Margin(m))
        } else {
            Err(Error::config(format!("margin must be finite and >= 0, got {m}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Margin {
    type Error = Error;
    fn try_from(m: f64) -> Result<Self> {
        Margin::new(m)
    }
}

impl From<Margin> for f64 {
    fn from(m: Margin) -> f64 {
        m.0
    }
}

/// Heaviside of `d_xy - d_xz`, with `H(0) = 0`.
pub fn ranking_loss(d_xy: f64, d_xz: f64) -> f64 {
    if d_xy > d_xz {
        1.0
    } else {
        0.0
    }
}

/// `log Σ exp(v)` with max subtraction.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// NCA value from precomputed distances: `d_pos + log Σ exp(-d_neg)`.
pub fn nca_from_distances(d_pos: f64, d_negs: &[f64]) -> f64 {
    let neg: Vec<f64> = d_negs.iter().map(|d| -d).collect();
    d_pos + log_sum_exp(&neg)
}

/// Hinge `[d_pos + M - d_neg]_+` from precomputed distances.
pub fn triplet_from_distances(d_pos: f64, d_neg: f64, margin: f64) -> f64 {
    (d_pos + margin - d_neg).max(0.0)
}

fn check_group(anchor: &[f64], others: &[&[f64]]) -> Result<()> {
    if anchor.is_empty() {
        return Err(Error::Usage("empty embedding".into()));
    }
    others.iter().try_for_each(|o| check_dims(anchor.len(), o.len()))
}

/// `-log( exp(-d(x,y)) / Σ_z exp(-d(x,z)) )`.
pub fn nca_loss(anchor: &[f64], positive: &[f64], negatives: &[Vec<f64>]) -> Result<LossOutput> {
    if negatives.is_empty() {
        return Err(Error::Usage("NCA loss needs at least one negative".into()));
    }
    check_group(anchor, &[positive])?;
    for z in negatives {
        check_dims(anchor.len(), z.len())?;
    }
    let d_pos = sq_dist(anchor, positive);
    let neg_logits: Vec<f64> = negatives.iter().map(|z| -sq_dist(anchor, z)).collect();
    let lse = log_sum_exp(&neg_logits);
    let value = d_pos + lse;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("NCA loss is not finite ({value})")));
    }

    // ∂/∂d_pos = 1, ∂/∂d_z = -w_z with w = softmax(-d_z); ∂d(a,b)/∂a = 2(a-b).
    let diff_pos = linalg::sub(anchor, positive);
    let mut grad_anchor = linalg::scale(&diff_pos, 2.0);
    let grad_positive = linalg::scale(&diff_pos, -2.0);
    let grad_negatives = negatives
        .iter()
        .zip(&neg_logits)
        .map(|(z, &logit)| {
            let w = (logit - lse).exp();
            let diff = linalg::sub(anchor, z);
            linalg::axpy(&mut grad_anchor, -2.0 * w, &diff);
            linalg::scale(&diff, 2.0 * w)
        })
        .collect();
    Ok(LossOutput {
        value,
        grad_anchor,
        grad_positive,
        grad_negatives,
    })
}

/// `[d(x,y) + M - d(x,z)]_+`; the zero subgradient is used at the kink.
pub fn triplet_hinge_loss(
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    margin: Margin,
) -> Result<LossOutput> {
    check_group(anchor, &[positive, negative])?;
    let d_pos = sq_dist(anchor, positive);
    let d_neg = sq_dist(anchor, negative);
    let arg = d_pos + margin.get() - d_neg;
    let dim = anchor.len();
    if arg <= 0.0 {
        return Ok(LossOutput {
            value: 0.0,
            grad_anchor: vec![0.0; dim],
            grad_positive: vec![0.0; dim],
            grad_negatives: vec![vec![0.0; dim]],
        });
    }
    // ∂/∂x = 2(x-y) - 2(x-z) = 2(z-y)
    let grad_anchor = negative.iter().zip(positive).map(|(z, y)| 2.0 * (z - y)).collect();
    let grad_positive = positive.iter().zip(anchor).map(|(y, x)| 2.0 * (y - x)).collect();
    let grad_negative = anchor.iter().zip(negative).map(|(x, z)| 2.0 * (x - z)).collect();
    Ok(LossOutput {
        value: arg,
        grad_anchor,
        grad_positive,
        grad_negatives: vec![grad_negative],
    })
}

/// NCA against proxies; gradients are routed to the anchor and every proxy.
pub fn proxy_nca_loss(
    anchor: &[f64],
    positive_proxy: &[f64],
    negative_proxies: &[Vec<f64>],
) -> Result<LossOutput> {
    nca_loss(anchor, positive_proxy, negative_proxies)
}

/// Margin triplet against a positive and a negative proxy.
pub fn proxy_triplet_loss(
    anchor: &[f64],
    positive_proxy: &[f64],
    negative_proxy: &[f64],
    margin: Margin,
) -> Result<LossOutput> {
    triplet_hinge_loss(anchor, positive_proxy, negative_proxy, margin)
}

/// Mean loss over a batch with one gradient per batch element.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLossOutput {
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
    pub num_triplets: usize,
    /// Set when the batch has no usable (anchor, positive, negative) triplet.
    pub degenerate: bool,
}

impl BatchLossOutput {
    fn degenerate(n: usize, dim: usize) -> Self {
        BatchLossOutput {
            value: 0.0,
            grads: vec![vec![0.0; dim]; n],
            num_triplets: 0,
            degenerate: true,
        }
    }
}

fn check_batch(embeddings: &[Vec<f64>], labels: &[usize]) -> Result<usize> {
    check_dims(embeddings.len(), labels.len())?;
    let dim = embeddings.first().map_or(0, Vec::len);
    for e in embeddings {
        check_dims(dim, e.len())?;
    }
    Ok(dim)
}

/// Picks the semi-hard negative for `(anchor, d_pos)`: the closest negative
/// strictly farther than the positive, or failing that the farthest negative.
/// Ties go to the lowest index.
pub fn select_semihard_negative(dists: &[f64], labels: &[usize], anchor: usize, d_pos: f64) -> Option<usize> {
    let mut semihard: Option<usize> = None;
    let mut fallback: Option<usize> = None;
    for (n, &d) in dists.iter().enumerate() {
        if labels[n] == labels[anchor] {
            continue;
        }
        if d > d_pos && semihard.is_none_or(|s| d < dists[s]) {
            semihard = Some(n);
        }
        if fallback.is_none_or(|f| d > dists[f]) {
            fallback = Some(n);
        }
    }
    semihard.or(fallback)
}

/// Margin triplet loss with in-batch semi-hard negative mining, averaged
/// over all (anchor, positive) pairs.
pub fn semihard_triplet_batch_loss(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    margin: Margin,
) -> Result<BatchLossOutput> {
    let dim = check_batch(embeddings, labels)?;
    let n = embeddings.len();
    let dist: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|a| embeddings.iter().map(|b| sq_dist(a, b)).collect())
        .collect();
    let mut grads = vec![vec![0.0; dim]; n];
    let mut total = 0.0;
    let mut count = 0usize;
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            let Some(neg) = select_semihard_negative(&dist[a], labels, a, dist[a][p]) else {
                continue;
            };
            count += 1;
            let out = triplet_hinge_loss(&embeddings[a], &embeddings[p], &embeddings[neg], margin)?;
            total += out.value;
            linalg::axpy(&mut grads[a], 1.0, &out.grad_anchor);
            linalg::axpy(&mut grads[p], 1.0, &out.grad_positive);
            linalg::axpy(&mut grads[neg], 1.0, &out.grad_negatives[0]);
        }
    }
    if count == 0 {
        log::warn!("semi-hard batch has no valid triplet (needs >= 2 classes and a repeated class)");
        return Ok(BatchLossOutput::degenerate(n, dim));
    }
    let inv = 1.0 / count as f64;
    grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= inv));
    Ok(BatchLossOutput {
        value: total * inv,
        grads,
        num_triplets: count,
        degenerate: false,
    })
}

/// Instance NCA inside a batch: every (anchor, positive) pair against all
/// in-batch points of other classes, averaged over pairs.
pub fn nca_batch_loss(embeddings: &[Vec<f64>], labels: &[usize]) -> Result<BatchLossOutput> {
    let dim = check_batch(embeddings, labels)?;
    let n = embeddings.len();
    let mut grads = vec![vec![0.0; dim]; n];
    let mut total = 0.0;
    let mut count = 0usize;
    for a in 0..n {
        let neg_idx: Vec<usize> = (0..n).filter(|&j| labels[j] != labels[a]).collect();
        if neg_idx.is_empty() {
            continue;
        }
        let negs: Vec<Vec<f64>> = neg_idx.iter().map(|&j| embeddings[j].clone()).collect();
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            let out = nca_loss(&embeddings[a], &embeddings[p], &negs)?;
            count += 1;
            total += out.value;
            linalg::axpy(&mut grads[a], 1.0, &out.grad_anchor);
            linalg::axpy(&mut grads[p], 1.0, &out.grad_positive);
            for (&j, g) in neg_idx.iter().zip(&out.grad_negatives) {
                linalg::axpy(&mut grads[j], 1.0, g);
            }
        }
    }
    if count == 0 {
        log::warn!("NCA batch has no valid (anchor, positive, negatives) group");
        return Ok(BatchLossOutput::degenerate(n, dim));
    }
    let inv = 1.0 / count as f64;
    grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= inv));
    Ok(BatchLossOutput {
        value: total * inv,
        grads,
        num_triplets: count,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn m(v: f64) -> Margin {
        Margin::new(v).unwrap()
    }

    #[test]
    fn ranking_cases() {
        assert_eq!(ranking_loss(1.0, 2.0), 0.0);
        assert_eq!(ranking_loss(2.0, 1.0), 1.0);
        assert_eq!(ranking_loss(1.5, 1.5), 0.0);
    }

    #[test]
    fn nca_equal_distances_single_negative_is_zero() {
        let out = nca_loss(&[0.0, 0.0], &[1.0, 0.0], &[vec![0.0, 1.0]]).unwrap();
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn nca_two_equidistant_negatives_is_log2() {
        let out = nca_loss(&[0.0, 0.0], &[1.0, 0.0], &[vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        assert!((out.value - LN2).abs() < 1e-15);
    }

    #[test]
    fn nca_can_be_negative() {
        let out = nca_loss(&[1.0], &[1.0], &[vec![1.0 + 10f64.sqrt()]]).unwrap();
        assert!((out.value + 10.0).abs() < 1e-12);
    }

    #[test]
    fn nca_without_negatives_is_usage_error() {
        assert!(matches!(nca_loss(&[0.0], &[1.0], &[]), Err(Error::Usage(_))));
    }

    #[test]
    fn nca_log_sum_exp_matches_naive_form() {
        let x = [0.5, -1.0, 2.0];
        let y = [0.0, 0.5, 1.0];
        let zs = vec![vec![1.0, 1.0, 1.0], vec![-2.0, 0.0, 3.0], vec![0.0, -1.5, 2.5]];
        let d = |a: &[f64], b: &[f64]| sq_dist(a, b);
        let naive = -((-d(&x, &y)).exp() / zs.iter().map(|z| (-d(&x, z)).exp()).sum::<f64>()).ln();
        let got = nca_loss(&x, &y, &zs).unwrap().value;
        assert!((got - naive).abs() <= 1e-9 * naive.abs().max(1.0));
    }

    #[test]
    fn proxy_nca_uniform_softmax() {
        // 6 proxies at unit distance: 1 + log(5 e^-1) = log 5.
        let anchor = vec![0.0; 6];
        let proxies: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                let mut v = vec![0.0; 6];
                v[i] = 1.0;
                v
            })
            .collect();
        let out = proxy_nca_loss(&anchor, &proxies[0], &proxies[1..]).unwrap();
        assert!((out.value - 5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn proxy_nca_is_bitwise_nca() {
        let x = [0.1, 0.2];
        let p = [1.0, -1.0];
        let z = vec![vec![2.0, 0.5], vec![-0.3, 0.7]];
        assert_eq!(nca_loss(&x, &p, &z).unwrap(), proxy_nca_loss(&x, &p, &z).unwrap());
    }

    #[test]
    fn triplet_cases() {
        // d(x,y)=1, d(x,z)=2, M=0.5
        let out = triplet_hinge_loss(&[0.0], &[1.0], &[2f64.sqrt()], m(0.5)).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grad_anchor.iter().all(|&g| g == 0.0));
        // d(x,y)=2, d(x,z)=1, M=1
        let out = triplet_hinge_loss(&[0.0], &[2f64.sqrt()], &[1.0], m(1.0)).unwrap();
        assert!((out.value - 2.0).abs() < 1e-15);
        // kink: zero subgradient
        let out = triplet_hinge_loss(&[0.0], &[1.0], &[2f64.sqrt()], m(1.0)).unwrap();
        assert!(out.grad_positive.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn proxy_triplet_mirrors_triplet() {
        let out = proxy_triplet_loss(&[0.0], &[1.0], &[2f64.sqrt()], m(0.5)).unwrap();
        assert_eq!(out.value, 0.0);
        let out = proxy_triplet_loss(&[0.0], &[2f64.sqrt()], &[1.0], m(1.0)).unwrap();
        assert!((out.value - 2.0).abs() < 1e-15);
    }

    #[test]
    fn margin_rejects_negative() {
        assert!(Margin::new(-0.1).is_err());
        assert!(Margin::new(f64::NAN).is_err());
    }

    #[test]
    fn semihard_all_inactive() {
        let e = vec![vec![0.0], vec![0.1], vec![10.0], vec![10.1]];
        let out = semihard_triplet_batch_loss(&e, &[0, 0, 1, 1], m(1.0)).unwrap();
        assert_eq!(out.value, 0.0);
        assert_eq!(out.num_triplets, 4);
        assert!(!out.degenerate);
    }

    #[test]
    fn semihard_single_class_is_degenerate() {
        let e = vec![vec![0.0], vec![1.0]];
        let out = semihard_triplet_batch_loss(&e, &[0, 0], m(1.0)).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn semihard_hand_placed_1d() {
        // class 0 at {0, 2}, class 1 at {1, 5}; margin 1.
        // a=0,p=1 (d=4): negs d=1 (idx2), 25 (idx3) -> semihard idx3 (25>4): [4+1-25]+=0
        // a=1,p=0 (d=4): negs d=1, 9 -> idx3 (9): [4+1-9]+=0
        // a=2,p=3 (d=16): negs d=1 (idx0), 1 (idx1); none >16 -> farthest, tie -> idx0: 16+1-1=16
        // a=3,p=2 (d=16): negs d=25, 9 -> semihard idx0 (25): [16+1-25]+=0
        let e = vec![vec![0.0], vec![2.0], vec![1.0], vec![5.0]];
        let out = semihard_triplet_batch_loss(&e, &[0, 0, 1, 1], m(1.0)).unwrap();
        assert_eq!(out.num_triplets, 4);
        assert!((out.value - 4.0).abs() < 1e-12);
    }
}
