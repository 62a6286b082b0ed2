//! Learnable proxy vectors and the rules that assign data points to them.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{check_dims, sq_dist};
use crate::{seeded_rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentMode {
    /// Proxy fixed by the point's label for the whole run.
    Static,
    /// Proxy is the nearest one under the current model.
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    SquaredEuclidean,
    Euclidean,
}

impl DistanceKind {
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            DistanceKind::SquaredEuclidean => sq_dist(a, b),
            DistanceKind::Euclidean => sq_dist(a, b).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxySet {
    pub vectors: Vec<Vec<f64>>,
    pub mode: AssignmentMode,
    /// `label_to_proxy[label]`; present for static assignment.
    pub label_to_proxy: Option<Vec<usize>>,
    pub proxy_per_class_ratio: f64,
}

impl ProxySet {
    /// Entries i.i.d. uniform in `[-scale, scale]`, default `1/sqrt(embed_dim)`.
    /// The set starts in dynamic mode with no label map.
    pub fn init(num_proxies: usize, embed_dim: usize, seed: u64, scale: Option<f64>) -> Result<Self> {
        if num_proxies < 2 {
            return Err(Error::config(format!("need at least 2 proxies, got {num_proxies}")));
        }
        if embed_dim == 0 {
            return Err(Error::config("embedding dimension must be >= 1"));
        }
        let s = scale.unwrap_or(1.0 / (embed_dim as f64).sqrt());
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::config(format!("proxy init scale must be positive, got {s}")));
        }
        let mut rng = seeded_rng(seed);
        let vectors = (0..num_proxies)
            .map(|_| (0..embed_dim).map(|_| rng.random_range(-s..=s)).collect())
            .collect();
        Ok(ProxySet {
            vectors,
            mode: AssignmentMode::Dynamic,
            label_to_proxy: None,
            proxy_per_class_ratio: 1.0,
        })
    }

    /// Proxy set for `num_labels` training labels at `ratio` proxies per
    /// label. Static mode pre-assigns labels to proxies (several labels share
    /// a proxy when `ratio < 1`).
    pub fn for_labels(
        num_labels: usize,
        ratio: f64,
        mode: AssignmentMode,
        embed_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let pre = fractional_preassign(num_labels, ratio, seed.wrapping_add(1))?;
        let mut set = ProxySet::init(pre.num_proxies, embed_dim, seed, None)?;
        set.mode = mode;
        set.proxy_per_class_ratio = ratio;
        if mode == AssignmentMode::Static {
            set.label_to_proxy = Some(pre.label_to_proxy);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vectors.len() < 2 {
            return Err(Error::config("a proxy set needs at least 2 proxies"));
        }
        let dim = self.dim();
        for v in &self.vectors {
            check_dims(dim, v.len())?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric("proxy entries must be finite".into()));
            }
        }
        match (&self.mode, &self.label_to_proxy) {
            (AssignmentMode::Static, None) => {
                return Err(Error::config("static assignment requires a label map"))
            }
            (_, Some(map)) if map.iter().any(|&p| p >= self.vectors.len()) => {
                return Err(Error::config("label map points past the last proxy"))
            }
            _ => {}
        }
        Ok(())
    }

    /// Proxy index of `label` under static assignment.
    pub fn assign_static(&self, label: usize) -> Result<usize> {
        if self.mode != AssignmentMode::Static {
            return Err(Error::Usage("static lookup on a dynamic proxy set".into()));
        }
        self.label_to_proxy
            .as_ref()
            .and_then(|m| m.get(label).copied())
            .ok_or_else(|| Error::Lookup(format!("label {label} has no proxy")))
    }

    /// Proxy index for an embedded point under the set's mode.
    pub fn assign(&self, embedding: &[f64], label: usize) -> Result<usize> {
        match self.mode {
            AssignmentMode::Static => self.assign_static(label),
            AssignmentMode::Dynamic => assign_dynamic(embedding, &self.vectors)
                .ok_or_else(|| Error::Usage("empty proxy set".into())),
        }
    }
}

/// Index of the nearest proxy by squared distance, lowest index on ties.
/// `None` only for an empty proxy list.
pub fn assign_dynamic(x: &[f64], proxies: &[Vec<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in proxies.iter().enumerate() {
        let d = sq_dist(x, p);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FractionalAssignment {
    pub label_to_proxy: Vec<usize>,
    pub num_proxies: usize,
    /// The requested ratio gave fewer than 2 proxies.
    pub clamped: bool,
}

/// Randomly pre-assigns `num_labels` labels to `max(2, ceil(num_labels *
/// ratio))` proxies; per-proxy label counts differ by at most one.
pub fn fractional_preassign(num_labels: usize, ratio: f64, seed: u64) -> Result<FractionalAssignment> {
    if num_labels == 0 {
        return Err(Error::config("need at least one label"));
    }
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(Error::config(format!("proxy ratio must be positive, got {ratio}")));
    }
    // Guard against 0.5 * 196 landing a hair above 98 in floating point.
    let raw = num_labels as f64 * ratio;
    let wanted = if (raw - raw.round()).abs() < 1e-9 { raw.round() } else { raw.ceil() } as usize;
    let clamped = wanted < 2;
    if clamped {
        log::warn!("{num_labels} labels at ratio {ratio} gives {wanted} proxies; clamping to 2");
    }
    let num_proxies = wanted.max(2);
    let mut order: Vec<usize> = (0..num_labels).collect();
    order.shuffle(&mut seeded_rng(seed));
    let mut label_to_proxy = vec![0; num_labels];
    for (slot, &label) in order.iter().enumerate() {
        label_to_proxy[label] = slot % num_proxies;
    }
    Ok(FractionalAssignment {
        label_to_proxy,
        num_proxies,
        clamped,
    })
}

/// Worst point-to-proxy distance and the point attaining it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxError {
    pub epsilon: f64,
    pub argmax_point_index: usize,
    pub kind: DistanceKind,
}

/// `max_x min_p d(x, p)` with nearest-proxy assignment.
pub fn proxy_approx_error(
    embeddings: &[Vec<f64>],
    proxies: &[Vec<f64>],
    kind: DistanceKind,
) -> Result<ApproxError> {
    if proxies.is_empty() {
        return Err(Error::Usage("empty proxy set".into()));
    }
    let assignment: Vec<usize> = embeddings
        .iter()
        .map(|e| assign_dynamic(e, proxies).unwrap_or(0))
        .collect();
    assigned_approx_error(embeddings, proxies, &assignment, kind)
}

/// `max_x d(x, proxies[assignment[x]])` for an explicit assignment.
pub fn assigned_approx_error(
    embeddings: &[Vec<f64>],
    proxies: &[Vec<f64>],
    assignment: &[usize],
    kind: DistanceKind,
) -> Result<ApproxError> {
    if embeddings.is_empty() {
        return Err(Error::Usage("approximation error of an empty point set".into()));
    }
    check_dims(embeddings.len(), assignment.len())?;
    let mut worst = ApproxError {
        epsilon: f64::NEG_INFINITY,
        argmax_point_index: 0,
        kind,
    };
    for (i, (e, &a)) in embeddings.iter().zip(assignment).enumerate() {
        let p = proxies
            .get(a)
            .ok_or_else(|| Error::Lookup(format!("point {i} assigned to missing proxy {a}")))?;
        check_dims(e.len(), p.len())?;
        let d = kind.eval(e, p);
        if d > worst.epsilon {
            worst.epsilon = d;
            worst.argmax_point_index = i;
        }
    }
    Ok(worst)
}
