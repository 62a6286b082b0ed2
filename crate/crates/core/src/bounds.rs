//! Numerical audits of the proxy bounds.
//!
//! Two distance conventions are in play and every report names the one it
//! used:
//!
//! * ordinal preservation and the ranking-expectation bound are checked with
//!   the Euclidean metric `‖a − b‖` on the raw configuration, with `ε` the
//!   largest Euclidean point-to-proxy distance;
//! * the NCA and margin-triplet bounds are checked on a constant-norm
//!   configuration with `d(a, b) = ½‖a − b‖²` (so that `½‖x̂ − ŷ‖² = 1 − x̂ᵀŷ`
//!   on the unit sphere) and `ε = max ‖ŷ − p̂(y)‖²` over unit vectors, which
//!   gives `|x̂ᵀ(ŷ − p̂(y))| ≤ √ε`.
//!
//! A sample whose slack (right side minus left side) is below `-SLACK_TOL`
//! counts as a violation. Samples drawn from a configuration that does not
//! meet a bound's preconditions are counted separately and never as
//! violations.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::{self, check_dims, mean_std, norm, sq_dist, unit};
use crate::losses::{nca_from_distances, ranking_loss, triplet_from_distances};
use crate::proxies::{assigned_approx_error, DistanceKind};
use crate::{seeded_rng, Error, Result};

/// Absolute slack below which a sample is not counted as a violation.
pub const SLACK_TOL: f64 = 1e-9;
/// Relative norm spread (`std / mean`) tolerated for "constant norm".
pub const NORM_REL_TOL: f64 = 1e-6;
/// Largest triplet population enumerated without a sampling override.
pub const MAX_ENUMERATED_TRIPLETS: usize = 1_000_000;

pub const EUCLIDEAN_CONVENTION: &str = "euclidean: d = ||a-b||, eps = max ||y - p(y)||";
pub const UNIT_SPHERE_CONVENTION: &str =
    "unit-sphere: d = 0.5*||a-b||^2, eps = max ||y_hat - p_hat(y)||^2 over unit vectors";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NormStats {
    pub embedding_mean: f64,
    pub embedding_std: f64,
    pub proxy_mean: f64,
    pub proxy_std: f64,
}

impl NormStats {
    pub fn of(points: &[Vec<f64>], proxies: &[Vec<f64>]) -> Self {
        let (embedding_mean, embedding_std) = mean_std(points.iter().map(|p| norm(p)));
        let (proxy_mean, proxy_std) = mean_std(proxies.iter().map(|p| norm(p)));
        NormStats {
            embedding_mean,
            embedding_std,
            proxy_mean,
            proxy_std,
        }
    }

    pub fn constant_norms(&self) -> bool {
        self.embedding_std <= NORM_REL_TOL * self.embedding_mean && self.proxy_std <= NORM_REL_TOL * self.proxy_mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub bound_name: String,
    pub samples_checked: usize,
    pub violations: usize,
    pub precondition_failures: usize,
    /// Smallest per-sample slack (RHS − LHS).
    pub max_slack: f64,
    pub mean_slack: f64,
    pub epsilon_used: f64,
    pub alpha_used: f64,
    pub norm_stats: NormStats,
    pub distance_convention: String,
    /// The population was sampled rather than enumerated.
    pub estimated: bool,
    /// Whether the slack statistics cover only precondition-satisfying
    /// samples (`true`) or, when none qualify, every sample.
    pub slack_over_qualifying_samples: bool,
    /// Bound-specific quantities (expectations, secondary constants, ...).
    pub extras: BTreeMap<String, f64>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Accumulates per-sample slacks into a report.
struct SlackTally {
    qualifying: Vec<f64>,
    other: Vec<f64>,
}

impl SlackTally {
    fn new() -> Self {
        SlackTally {
            qualifying: Vec::new(),
            other: Vec::new(),
        }
    }

    fn push(&mut self, slack: f64, preconditions_met: bool) {
        if preconditions_met {
            self.qualifying.push(slack);
        } else {
            self.other.push(slack);
        }
    }

    fn violations(slacks: &[f64]) -> usize {
        slacks.iter().filter(|&&s| !(s >= -SLACK_TOL)).count()
    }

    fn finish(self, name: &str, epsilon: f64, alpha: f64, norm_stats: NormStats, convention: &str) -> BoundReport {
        let over_qualifying = !self.qualifying.is_empty() || self.other.is_empty();
        let scope = if over_qualifying { &self.qualifying } else { &self.other };
        let (min, mean) = if scope.is_empty() {
            (0.0, 0.0)
        } else {
            (
                scope.iter().copied().fold(f64::INFINITY, f64::min),
                scope.iter().sum::<f64>() / scope.len() as f64,
            )
        };
        let mut extras = BTreeMap::new();
        extras.insert(
            "violations_outside_preconditions".to_string(),
            Self::violations(&self.other) as f64,
        );
        BoundReport {
            bound_name: name.to_string(),
            samples_checked: self.qualifying.len() + self.other.len(),
            violations: Self::violations(&self.qualifying),
            precondition_failures: self.other.len(),
            max_slack: min,
            mean_slack: mean,
            epsilon_used: epsilon,
            alpha_used: alpha,
            norm_stats,
            distance_convention: convention.to_string(),
            estimated: false,
            slack_over_qualifying_samples: over_qualifying,
            extras,
        }
    }
}

/// Embeddings, proxies, and the proxy each embedding is assigned to.
#[derive(Debug, Clone, Copy)]
pub struct ProxiedPoints<'a> {
    pub points: &'a [Vec<f64>],
    pub proxies: &'a [Vec<f64>],
    pub assignment: &'a [usize],
}

impl<'a> ProxiedPoints<'a> {
    pub fn new(points: &'a [Vec<f64>], proxies: &'a [Vec<f64>], assignment: &'a [usize]) -> Result<Self> {
        check_dims(points.len(), assignment.len())?;
        if points.is_empty() || proxies.is_empty() {
            return Err(Error::Usage("bound checks need points and proxies".into()));
        }
        let dim = points[0].len();
        for v in points.iter().chain(proxies) {
            check_dims(dim, v.len())?;
        }
        if let Some(&a) = assignment.iter().find(|&&a| a >= proxies.len()) {
            return Err(Error::Lookup(format!("assignment refers to missing proxy {a}")));
        }
        Ok(ProxiedPoints {
            points,
            proxies,
            assignment,
        })
    }

    fn proxy_of(&self, i: usize) -> &[f64] {
        &self.proxies[self.assignment[i]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletSample {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NcaSample {
    pub anchor: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

/// Unit-sphere view of a configuration plus its original mean norms.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedConfig {
    pub unit_embeddings: Vec<Vec<f64>>,
    pub unit_proxies: Vec<Vec<f64>>,
    /// Mean embedding norm before normalization.
    pub n_x: f64,
    /// Mean proxy norm before normalization.
    pub n_p: f64,
    pub norm_stats: NormStats,
}

impl NormalizedConfig {
    /// `1 / (N_p N_x)`.
    pub fn alpha(&self) -> f64 {
        1.0 / (self.n_p * self.n_x)
    }

    /// Embeddings rescaled to norm `N_x` and proxies to `N_p`.
    pub fn constant_norm_config(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (
            self.unit_embeddings.iter().map(|v| linalg::scale(v, self.n_x)).collect(),
            self.unit_proxies.iter().map(|v| linalg::scale(v, self.n_p)).collect(),
        )
    }
}

pub fn normalize_config(embeddings: &[Vec<f64>], proxies: &[Vec<f64>]) -> Result<NormalizedConfig> {
    if embeddings.is_empty() || proxies.is_empty() {
        return Err(Error::Degenerate("need at least one embedding and one proxy".into()));
    }
    let split = |vs: &[Vec<f64>]| -> Result<(Vec<Vec<f64>>, f64)> {
        let mut units = Vec::with_capacity(vs.len());
        let mut total = 0.0;
        for v in vs {
            let (u, n) = unit(v)?;
            units.push(u);
            total += n;
        }
        Ok((units, total / vs.len() as f64))
    };
    let (unit_embeddings, n_x) = split(embeddings)?;
    let (unit_proxies, n_p) = split(proxies)?;
    Ok(NormalizedConfig {
        unit_embeddings,
        unit_proxies,
        n_x,
        n_p,
        norm_stats: NormStats::of(embeddings, proxies),
    })
}

/// `|{d(x,y) − d(x,z)} − {d(x,p(y)) − d(x,p(z))}| ≤ 2ε` under the Euclidean
/// metric, plus the consequence that the ordering of `d(x,y)` and `d(x,z)`
/// matches the proxy ordering whenever the proxy gap exceeds `2ε`.
pub fn verify_ordinal_preservation(cfg: &ProxiedPoints, samples: &[TripletSample]) -> Result<BoundReport> {
    let eps = assigned_approx_error(cfg.points, cfg.proxies, cfg.assignment, DistanceKind::Euclidean)?.epsilon;
    let d = |a: &[f64], b: &[f64]| sq_dist(a, b).sqrt();
    let mut tally = SlackTally::new();
    let mut order_violations = 0usize;
    let mut decisive = 0usize;
    for s in samples {
        let x = &cfg.points[s.anchor];
        let data_gap = d(x, &cfg.points[s.positive]) - d(x, &cfg.points[s.negative]);
        let proxy_gap = d(x, cfg.proxy_of(s.positive)) - d(x, cfg.proxy_of(s.negative));
        tally.push(2.0 * eps - (data_gap - proxy_gap).abs(), true);
        if proxy_gap.abs() > 2.0 * eps + SLACK_TOL {
            decisive += 1;
            if data_gap.signum() != proxy_gap.signum() || data_gap == 0.0 {
                order_violations += 1;
            }
        }
    }
    let mut report = tally.finish(
        "ordinal_preservation",
        eps,
        1.0,
        NormStats::of(cfg.points, cfg.proxies),
        EUCLIDEAN_CONVENTION,
    );
    report.violations += order_violations;
    report.extras.insert("order_violations".into(), order_violations as f64);
    report.extras.insert("decisive_samples".into(), decisive as f64);
    Ok(report)
}

/// `E[H(d(x,y) − d(x,z))] ≤ E[H(d(x,p(y)) − d(x,p(z)))] + Pr[|d(x,p(y)) − d(x,p(z))| ≤ 2ε]`,
/// Euclidean metric. Checked pointwise (which implies the expectation form)
/// and on the sample means.
pub fn verify_ranking_expectation_bound(cfg: &ProxiedPoints, samples: &[TripletSample]) -> Result<BoundReport> {
    let eps = assigned_approx_error(cfg.points, cfg.proxies, cfg.assignment, DistanceKind::Euclidean)?.epsilon;
    let d = |a: &[f64], b: &[f64]| sq_dist(a, b).sqrt();
    let mut tally = SlackTally::new();
    let (mut lhs, mut rank_proxy, mut near_tie) = (0.0, 0.0, 0.0);
    for s in samples {
        let x = &cfg.points[s.anchor];
        let data = ranking_loss(d(x, &cfg.points[s.positive]), d(x, &cfg.points[s.negative]));
        let py = d(x, cfg.proxy_of(s.positive));
        let pz = d(x, cfg.proxy_of(s.negative));
        let proxy = ranking_loss(py, pz);
        let tie = if (py - pz).abs() <= 2.0 * eps { 1.0 } else { 0.0 };
        tally.push(proxy + tie - data, true);
        lhs += data;
        rank_proxy += proxy;
        near_tie += tie;
    }
    let n = samples.len().max(1) as f64;
    let mut report = tally.finish(
        "ranking_expectation",
        eps,
        1.0,
        NormStats::of(cfg.points, cfg.proxies),
        EUCLIDEAN_CONVENTION,
    );
    let (lhs, rank_proxy, near_tie) = (lhs / n, rank_proxy / n, near_tie / n);
    report.extras.insert("expected_ranking_loss".into(), lhs);
    report.extras.insert("expected_proxy_ranking_loss".into(), rank_proxy);
    report.extras.insert("prob_within_2eps".into(), near_tie);
    report.extras.insert("expectation_slack".into(), rank_proxy + near_tie - lhs);
    if rank_proxy + near_tie - lhs < -SLACK_TOL {
        report.violations += 1;
    }
    Ok(report)
}

/// Constant-norm facts shared by the NCA, triplet and total-loss checks.
#[derive(Debug, Clone)]
struct UnitSphereSetup {
    unit_points: Vec<Vec<f64>>,
    eps: f64,
    alpha: f64,
    norm_stats: NormStats,
    preconditions_met: bool,
}

impl UnitSphereSetup {
    fn new(cfg: &ProxiedPoints) -> Result<Self> {
        let nc = normalize_config(cfg.points, cfg.proxies)?;
        let eps = assigned_approx_error(&nc.unit_embeddings, &nc.unit_proxies, cfg.assignment, DistanceKind::SquaredEuclidean)?
            .epsilon;
        let alpha = nc.alpha();
        let preconditions_met = nc.norm_stats.constant_norms() && nc.n_x > 1.0 && alpha < 1.0;
        Ok(UnitSphereSetup {
            unit_points: nc.unit_embeddings,
            eps,
            alpha,
            norm_stats: nc.norm_stats,
            preconditions_met,
        })
    }
}

fn half_sq(a: &[f64], b: &[f64]) -> f64 {
    0.5 * sq_dist(a, b)
}

/// NCA with `d = ½‖·‖²`.
fn nca_half(x: &[f64], y: &[f64], zs: &[&[f64]]) -> f64 {
    let dz: Vec<f64> = zs.iter().map(|z| half_sq(x, z)).collect();
    nca_from_distances(half_sq(x, y), &dz)
}

fn triplet_half(x: &[f64], y: &[f64], z: &[f64], margin: f64) -> f64 {
    triplet_from_distances(half_sq(x, y), half_sq(x, z), margin)
}

/// `L̂_NCA(x,y,Z) ≤ α L_NCA(x,p_y,p_Z) + (1−α) log|Z| + 2√(2ε)`, with `L̂`
/// on unit vectors and `L` on the raw constant-norm configuration. The
/// tighter constant `2√ε` is tallied separately in `extras`.
pub fn verify_nca_bound(cfg: &ProxiedPoints, samples: &[NcaSample]) -> Result<BoundReport> {
    let setup = UnitSphereSetup::new(cfg)?;
    let (alpha, eps) = (setup.alpha, setup.eps);
    let mut tally = SlackTally::new();
    let mut tight = SlackTally::new();
    for s in samples {
        if s.negatives.is_empty() {
            return Err(Error::Usage("NCA sample without negatives".into()));
        }
        let u = &setup.unit_points;
        let zs_hat: Vec<&[f64]> = s.negatives.iter().map(|&z| u[z].as_slice()).collect();
        let lhs = nca_half(&u[s.anchor], &u[s.positive], &zs_hat);
        let pzs: Vec<&[f64]> = s.negatives.iter().map(|&z| cfg.proxy_of(z)).collect();
        let proxy_loss = nca_half(&cfg.points[s.anchor], cfg.proxy_of(s.positive), &pzs);
        let base = alpha * proxy_loss + (1.0 - alpha) * (s.negatives.len() as f64).ln();
        tally.push(base + 2.0 * (2.0 * eps).sqrt() - lhs, setup.preconditions_met);
        tight.push(base + 2.0 * eps.sqrt() - lhs, setup.preconditions_met);
    }
    let tight = tight.finish("", eps, alpha, setup.norm_stats, "");
    let mut report = tally.finish("nca_proxy_bound", eps, alpha, setup.norm_stats, UNIT_SPHERE_CONVENTION);
    report.extras.insert("violations_2sqrt_eps".into(), tight.violations as f64);
    report.extras.insert("min_slack_2sqrt_eps".into(), tight.max_slack);
    Ok(report)
}

/// `L̂_triplet(x,y,z) ≤ α L_triplet(x,p_y,p_z) + (1−α) M + 2√ε`.
pub fn verify_triplet_bound(cfg: &ProxiedPoints, samples: &[TripletSample], margin: f64) -> Result<BoundReport> {
    if !(margin >= 0.0) || !margin.is_finite() {
        return Err(Error::config("margin must be finite and >= 0"));
    }
    let setup = UnitSphereSetup::new(cfg)?;
    let (alpha, eps) = (setup.alpha, setup.eps);
    let mut tally = SlackTally::new();
    for s in samples {
        let u = &setup.unit_points;
        let lhs = triplet_half(&u[s.anchor], &u[s.positive], &u[s.negative], margin);
        let proxy = triplet_half(&cfg.points[s.anchor], cfg.proxy_of(s.positive), cfg.proxy_of(s.negative), margin);
        let rhs = alpha * proxy + (1.0 - alpha) * margin + 2.0 * eps.sqrt();
        tally.push(rhs - lhs, setup.preconditions_met);
    }
    let mut report = tally.finish("triplet_proxy_bound", eps, alpha, setup.norm_stats, UNIT_SPHERE_CONVENTION);
    report.extras.insert("margin".into(), margin);
    Ok(report)
}

/// Per-triplet surrogate whose bound is aggregated over the whole data set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SurrogateLoss {
    /// Margin triplet; default `δ = (1−α)M + 2√ε`.
    Triplet { margin: f64 },
    /// NCA with a single negative; default `δ = 2√(2ε)`.
    Nca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingOverride {
    pub samples: usize,
    pub seed: u64,
}

/// All `(x, y, z)` with `c(x) = c(y)`, `x ≠ y`, `c(z) ≠ c(x)`.
pub fn enumerate_triplets(labels: &[usize]) -> Vec<TripletSample> {
    let n = labels.len();
    let mut out = Vec::new();
    for anchor in 0..n {
        for positive in 0..n {
            if positive == anchor || labels[positive] != labels[anchor] {
                continue;
            }
            for negative in 0..n {
                if labels[negative] != labels[anchor] {
                    out.push(TripletSample {
                        anchor,
                        positive,
                        negative,
                    });
                }
            }
        }
    }
    out
}

fn count_triplets(labels: &[usize]) -> u128 {
    let mut counts: BTreeMap<usize, u128> = BTreeMap::new();
    labels.iter().for_each(|&l| *counts.entry(l).or_default() += 1);
    let n = labels.len() as u128;
    counts.values().map(|&c| c * c.saturating_sub(1) * (n - c)).sum()
}

/// Uniformly sampled valid triplets. Anchors whose class has no other
/// member, or which have no other-class point, are redrawn.
pub fn sample_triplets(labels: &[usize], count: usize, seed: u64) -> Result<Vec<TripletSample>> {
    if count_triplets(labels) == 0 {
        return Err(Error::Degenerate("labels admit no triplet".into()));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    labels.iter().enumerate().for_each(|(i, &l)| by_class.entry(l).or_default().push(i));
    let n = labels.len();
    let mut rng = seeded_rng(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let anchor = rng.random_range(0..n);
        let same = &by_class[&labels[anchor]];
        if same.len() < 2 || same.len() == n {
            continue;
        }
        let positive = loop {
            let p = *same.choose(&mut rng).expect("non-empty class");
            if p != anchor {
                break p;
            }
        };
        let negative = loop {
            let z = rng.random_range(0..n);
            if labels[z] != labels[anchor] {
                break z;
            }
        };
        out.push(TripletSample {
            anchor,
            positive,
            negative,
        });
    }
    Ok(out)
}

/// Like [`sample_triplets`] but with `num_negatives` distinct other-class
/// negatives per sample (all of them if fewer exist).
pub fn sample_nca(labels: &[usize], count: usize, num_negatives: usize, seed: u64) -> Result<Vec<NcaSample>> {
    let trip = sample_triplets(labels, count, seed)?;
    let mut rng = seeded_rng(seed.wrapping_add(1));
    Ok(trip
        .into_iter()
        .map(|t| {
            let pool: Vec<usize> = (0..labels.len()).filter(|&z| labels[z] != labels[t.anchor]).collect();
            let k = num_negatives.clamp(1, pool.len());
            let mut negatives: Vec<usize> = pool.choose_multiple(&mut rng, k).copied().collect();
            negatives.sort_unstable();
            NcaSample {
                anchor: t.anchor,
                positive: t.positive,
                negatives,
            }
        })
        .collect())
}

/// `L(D) ≤ (α/|D|) Σ n_{x,p_y,p_z} L(x, p_y, p_z) + δ`, grouping triplets by
/// anchor and proxy pair. `alpha` / `delta` default to the constants of the
/// per-triplet bound.
pub fn verify_total_loss_bound(
    cfg: &ProxiedPoints,
    labels: &[usize],
    loss: SurrogateLoss,
    alpha: Option<f64>,
    delta: Option<f64>,
    sampling: Option<SamplingOverride>,
) -> Result<BoundReport> {
    check_dims(cfg.points.len(), labels.len())?;
    let population = count_triplets(labels);
    let (triplets, estimated) = match sampling {
        Some(s) => (sample_triplets(labels, s.samples, s.seed)?, true),
        None if population > MAX_ENUMERATED_TRIPLETS as u128 => {
            return Err(Error::config(format!(
                "{population} triplets exceed the enumeration limit; pass a sampling override"
            )))
        }
        None => (enumerate_triplets(labels), false),
    };
    if triplets.is_empty() {
        return Err(Error::Degenerate("labels admit no triplet".into()));
    }
    let setup = UnitSphereSetup::new(cfg)?;
    let alpha = alpha.unwrap_or(setup.alpha);
    let eps = setup.eps;
    let (delta, margin) = match loss {
        SurrogateLoss::Triplet { margin } => (delta.unwrap_or((1.0 - alpha) * margin + 2.0 * eps.sqrt()), margin),
        SurrogateLoss::Nca => (delta.unwrap_or(2.0 * (2.0 * eps).sqrt()), 0.0),
    };
    let u = &setup.unit_points;
    let instance = |t: &TripletSample| match loss {
        SurrogateLoss::Triplet { .. } => triplet_half(&u[t.anchor], &u[t.positive], &u[t.negative], margin),
        SurrogateLoss::Nca => nca_half(&u[t.anchor], &u[t.positive], &[u[t.negative].as_slice()]),
    };
    let proxy_loss = |x: usize, py: usize, pz: usize| {
        let (x, py, pz) = (&cfg.points[x], &cfg.proxies[py], &cfg.proxies[pz]);
        match loss {
            SurrogateLoss::Triplet { .. } => triplet_half(x, py, pz, margin),
            SurrogateLoss::Nca => nca_half(x, py, &[pz.as_slice()]),
        }
    };

    let mut groups: BTreeMap<(usize, usize, usize), usize> = BTreeMap::new();
    let mut lhs_sum = 0.0;
    for t in &triplets {
        lhs_sum += instance(t);
        *groups
            .entry((t.anchor, cfg.assignment[t.positive], cfg.assignment[t.negative]))
            .or_default() += 1;
    }
    let d = triplets.len() as f64;
    let lhs = lhs_sum / d;
    let weighted: f64 = groups
        .iter()
        .map(|(&(x, py, pz), &count)| count as f64 * proxy_loss(x, py, pz))
        .sum();
    let rhs = alpha * weighted / d + delta;

    let mut tally = SlackTally::new();
    tally.push(rhs - lhs, setup.preconditions_met);
    let mut report = tally.finish("total_loss_bound", eps, alpha, setup.norm_stats, UNIT_SPHERE_CONVENTION);
    report.estimated = estimated;
    report.extras.insert("lhs_mean_instance_loss".into(), lhs);
    report.extras.insert("rhs".into(), rhs);
    report.extras.insert("delta".into(), delta);
    report.extras.insert("num_triplets".into(), d);
    report.extras.insert("num_groups".into(), groups.len() as f64);
    Ok(report)
}

/// Knobs for [`verify_all`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsConfig {
    pub samples: usize,
    pub seed: u64,
    pub margin: f64,
    pub nca_negatives: usize,
    /// Sample the total-loss population instead of enumerating it.
    pub total_loss_samples: Option<usize>,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig {
            samples: 10_000,
            seed: 0,
            margin: 1.0,
            nca_negatives: 8,
            total_loss_samples: None,
        }
    }
}

/// Runs all five audits on one embedded, labeled configuration. The
/// Euclidean checks see the raw configuration; the unit-sphere checks see
/// it rescaled to constant norms `N_x`, `N_p`, and their reports carry the
/// raw norm spread.
pub fn verify_all(
    points: &[Vec<f64>],
    labels: &[usize],
    proxies: &[Vec<f64>],
    assignment: &[usize],
    cfg: &BoundsConfig,
) -> Result<Vec<BoundReport>> {
    let raw = ProxiedPoints::new(points, proxies, assignment)?;
    let triplets = sample_triplets(labels, cfg.samples, cfg.seed)?;
    let nca = sample_nca(labels, cfg.samples, cfg.nca_negatives, cfg.seed.wrapping_add(7))?;
    let nc = normalize_config(points, proxies)?;
    let (cpoints, cproxies) = nc.constant_norm_config();
    let rescaled = ProxiedPoints::new(&cpoints, &cproxies, assignment)?;
    let sampling = cfg.total_loss_samples.map(|samples| SamplingOverride {
        samples,
        seed: cfg.seed.wrapping_add(13),
    });
    let mut reports = vec![
        verify_ordinal_preservation(&raw, &triplets)?,
        verify_ranking_expectation_bound(&raw, &triplets)?,
        verify_nca_bound(&rescaled, &nca)?,
        verify_triplet_bound(&rescaled, &triplets, cfg.margin)?,
        verify_total_loss_bound(&rescaled, labels, SurrogateLoss::Triplet { margin: cfg.margin }, None, None, sampling)?,
    ];
    for r in &mut reports[2..] {
        r.norm_stats = nc.norm_stats;
        r.extras.insert(
            "raw_constant_norms".into(),
            if nc.norm_stats.constant_norms() { 1.0 } else { 0.0 },
        );
    }
    Ok(reports)
}

/// A random labeled configuration with exactly constant norms: one proxy
/// direction per class, points scattered around their class direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBoundConfig {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub proxies: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
}

impl SyntheticBoundConfig {
    pub fn view(&self) -> ProxiedPoints<'_> {
        ProxiedPoints {
            points: &self.points,
            proxies: &self.proxies,
            assignment: &self.assignment,
        }
    }
}

/// `N_x > 1` and `N_x N_p > 1` are drawn so the unit-sphere preconditions
/// hold; `spread` scales the per-point angular noise.
pub fn random_constant_norm_config(
    seed: u64,
    num_classes: usize,
    points_per_class: usize,
    dim: usize,
    spread: f64,
) -> SyntheticBoundConfig {
    let mut rng = seeded_rng(seed);
    let gauss = |rng: &mut crate::SeededRng| -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            if norm(&v) > 1e-6 {
                break v;
            }
        }
    };
    let n_x = rng.random_range(1.05..6.0);
    let n_p = rng.random_range((1.05 / n_x)..4.0);
    let dirs: Vec<Vec<f64>> = (0..num_classes).map(|_| unit(&gauss(&mut rng)).unwrap().0).collect();
    let proxies = dirs.iter().map(|d| linalg::scale(d, n_p)).collect();
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (c, d) in dirs.iter().enumerate() {
        for _ in 0..points_per_class {
            let noise = gauss(&mut rng);
            let v: Vec<f64> = d.iter().zip(&noise).map(|(a, b)| a + spread * b).collect();
            let v = unit(&v).map(|(u, _)| u).unwrap_or_else(|_| d.clone());
            points.push(linalg::scale(&v, n_x));
            labels.push(c);
        }
    }
    SyntheticBoundConfig {
        points,
        assignment: labels.clone(),
        labels,
        proxies,
    }
}
