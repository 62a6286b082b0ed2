//! The training loop: batches of anchors are embedded, scored against the
//! proxies (or against each other for the instance baselines), and the model
//! and proxies are updated together by the same optimizer.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::embedding::{EmbeddingModel, GradientBundle, ModelConfig};
use crate::eval::{self, EvalReport};
use crate::linalg::{self, unit, unit_backward};
use crate::losses::{self, Margin};
use crate::optim::{OptimizerKind, Optimizer, StepDecay};
use crate::proxies::{self, AssignmentMode, DistanceKind, ProxySet};
use crate::{seeded_rng, Error, Result, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    ProxyNca,
    ProxyTriplet,
    NcaBatch,
    TripletSemihard,
}

impl LossKind {
    pub fn uses_proxies(self) -> bool {
        matches!(self, LossKind::ProxyNca | LossKind::ProxyTriplet)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub lr_decay_rate: f64,
    pub lr_decay_every: usize,
    pub optimizer: OptimizerKind,
    pub rms_decay: f64,
    pub margin: f64,
    pub proxy_ratio: f64,
    pub assignment: AssignmentMode,
    pub normalize_embeddings_in_loss: bool,
    pub seed: u64,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss_kind: LossKind::ProxyNca,
            batch_size: 32,
            steps: 2000,
            learning_rate: 0.01,
            lr_decay_rate: 0.94,
            lr_decay_every: 100,
            optimizer: OptimizerKind::RmsAdaptive,
            rms_decay: 0.9,
            margin: 1.0,
            proxy_ratio: 1.0,
            assignment: AssignmentMode::Static,
            normalize_embeddings_in_loss: false,
            seed: 0,
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be >= 2"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(self.lr_decay_rate > 0.0 && self.lr_decay_rate <= 1.0) {
            return Err(Error::config("lr_decay_rate must lie in (0, 1]"));
        }
        if self.lr_decay_every == 0 || self.eval_every == 0 {
            return Err(Error::config("lr_decay_every and eval_every must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.rms_decay) {
            return Err(Error::config("rms_decay must lie in [0, 1)"));
        }
        if !(self.proxy_ratio > 0.0) || !self.proxy_ratio.is_finite() {
            return Err(Error::config("proxy_ratio must be positive"));
        }
        Margin::new(self.margin)?;
        Ok(())
    }

    pub fn schedule(&self) -> StepDecay {
        StepDecay {
            base: self.learning_rate,
            decay_rate: self.lr_decay_rate,
            every: self.lr_decay_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub kmeans_max_iters: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: vec![1, 2, 4, 8],
            kmeans_max_iters: 100,
            seed: 0,
        }
    }
}

/// One line of the metrics stream. Evaluation fields are present only on
/// evaluation records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub loss: f64,
    pub learning_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall_at_k: Option<BTreeMap<usize, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nmi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub wall_clock_ms: u64,
}

impl MetricsRecord {
    pub fn is_eval(&self) -> bool {
        self.recall_at_k.is_some()
    }
}

/// Counters showing what each step actually touched.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainStats {
    pub anchors: usize,
    pub positive_proxy_refs: usize,
    pub negative_proxy_refs: usize,
    /// Data triplets formed from batch members (instance losses only).
    pub sampled_triplets: usize,
    pub skipped_steps: usize,
}

/// Loss value and gradients for one batch.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss: f64,
    pub model: GradientBundle,
    pub proxies: Vec<Vec<f64>>,
    /// No usable triplet; the step should not update.
    pub skipped: bool,
}

/// Model and proxy initialization for a run.
pub fn init_run(cfg: &TrainConfig, model_cfg: &ModelConfig, train_ds: &Dataset) -> Result<(EmbeddingModel, ProxySet)> {
    cfg.validate()?;
    let model = EmbeddingModel::init(train_ds.dim(), model_cfg)?;
    let proxies = ProxySet::for_labels(
        train_ds.num_classes(),
        cfg.proxy_ratio,
        cfg.assignment,
        model.embed_dim(),
        cfg.seed ^ 0x9e37_79b9_7f4a_7c15,
    )?;
    Ok((model, proxies))
}

pub struct Trainer<'a> {
    cfg: TrainConfig,
    eval_cfg: EvalConfig,
    model: EmbeddingModel,
    proxies: ProxySet,
    optimizer: Optimizer,
    rng: SeededRng,
    train_ds: &'a Dataset,
    eval_ds: &'a Dataset,
    class_members: Vec<Vec<usize>>,
    stats: TrainStats,
    step: usize,
    last_batch: Vec<usize>,
    started: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(
        cfg: TrainConfig,
        eval_cfg: EvalConfig,
        model: EmbeddingModel,
        proxies: ProxySet,
        train_ds: &'a Dataset,
        eval_ds: &'a Dataset,
    ) -> Result<Self> {
        cfg.validate()?;
        proxies.validate()?;
        linalg::check_dims(model.input_dim(), train_ds.dim())?;
        linalg::check_dims(model.input_dim(), eval_ds.dim())?;
        linalg::check_dims(model.embed_dim(), proxies.dim())?;
        if proxies.mode == AssignmentMode::Static {
            for l in 0..train_ds.num_classes() {
                proxies.assign_static(l)?;
            }
        }
        Ok(Trainer {
            optimizer: Optimizer::new(cfg.optimizer, cfg.rms_decay),
            rng: seeded_rng(cfg.seed),
            class_members: train_ds.class_members(),
            cfg,
            eval_cfg,
            model,
            proxies,
            train_ds,
            eval_ds,
            stats: TrainStats::default(),
            step: 0,
            last_batch: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn model(&self) -> &EmbeddingModel {
        &self.model
    }

    pub fn proxies(&self) -> &ProxySet {
        &self.proxies
    }

    pub fn stats(&self) -> &TrainStats {
        &self.stats
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn last_batch(&self) -> &[usize] {
        &self.last_batch
    }

    pub fn into_parts(self) -> (EmbeddingModel, ProxySet, TrainStats) {
        (self.model, self.proxies, self.stats)
    }

    /// Uniform anchors for proxy losses; `ceil(b/4)` classes × up to 4
    /// points for the instance baselines.
    pub fn sample_batch(&mut self) -> Vec<usize> {
        let n = self.train_ds.len();
        if self.cfg.loss_kind.uses_proxies() {
            return (0..self.cfg.batch_size).map(|_| self.rng.random_range(0..n)).collect();
        }
        let per_class = 4;
        let wanted = self.cfg.batch_size.div_ceil(per_class).min(self.class_members.len());
        let mut classes: Vec<usize> = (0..self.class_members.len()).collect();
        classes.shuffle(&mut self.rng);
        let mut batch = Vec::with_capacity(wanted * per_class);
        for &c in &classes[..wanted] {
            let members = &self.class_members[c];
            batch.extend(members.choose_multiple(&mut self.rng, per_class.min(members.len())));
        }
        batch
    }

    /// Loss and gradients for a batch of training indices at the current
    /// parameters. Does not mutate anything.
    pub fn batch_gradients(&self, batch: &[usize]) -> Result<BatchGradients> {
        match self.cfg.loss_kind {
            LossKind::ProxyNca | LossKind::ProxyTriplet => self.proxy_batch(batch),
            LossKind::NcaBatch | LossKind::TripletSemihard => self.instance_batch(batch),
        }
    }

    fn proxy_batch(&self, batch: &[usize]) -> Result<BatchGradients> {
        let normalize = self.cfg.normalize_embeddings_in_loss;
        let margin = Margin::new(self.cfg.margin)?;
        let num_p = self.proxies.len();
        // (vector used in the loss, original norm)
        let used_proxies: Vec<(Vec<f64>, f64)> = self
            .proxies
            .vectors
            .iter()
            .map(|p| if normalize { unit(p) } else { Ok((p.clone(), 1.0)) })
            .collect::<Result<_>>()?;
        let mut model_grad = GradientBundle::zeros_like(&self.model);
        let mut proxy_grad = vec![vec![0.0; self.proxies.dim()]; num_p];
        let inv_b = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for &i in batch {
            let (emb, cache) = self.model.forward(&self.train_ds.points()[i])?;
            let (anchor, anchor_norm) = if normalize { unit(&emb)? } else { (emb, 1.0) };
            let pos = match self.proxies.mode {
                AssignmentMode::Static => self.proxies.assign_static(self.train_ds.labels()[i])?,
                AssignmentMode::Dynamic => {
                    let vs: Vec<Vec<f64>> = used_proxies.iter().map(|(v, _)| v.clone()).collect();
                    proxies::assign_dynamic(&anchor, &vs).unwrap_or(0)
                }
            };
            let neg_idx: Vec<usize> = (0..num_p).filter(|&j| j != pos).collect();
            let negs: Vec<Vec<f64>> = neg_idx.iter().map(|&j| used_proxies[j].0.clone()).collect();
            let positive = &used_proxies[pos].0;

            let (value, g_anchor, g_pos, g_negs) = match self.cfg.loss_kind {
                LossKind::ProxyNca => {
                    let out = losses::proxy_nca_loss(&anchor, positive, &negs)?;
                    (out.value, out.grad_anchor, out.grad_positive, out.grad_negatives)
                }
                _ => {
                    // mean hinge over every negative proxy
                    let inv = 1.0 / negs.len() as f64;
                    let dim = anchor.len();
                    let (mut v, mut ga, mut gp) = (0.0, vec![0.0; dim], vec![0.0; dim]);
                    let mut gn = Vec::with_capacity(negs.len());
                    for z in &negs {
                        let out = losses::proxy_triplet_loss(&anchor, positive, z, margin)?;
                        v += out.value * inv;
                        linalg::axpy(&mut ga, inv, &out.grad_anchor);
                        linalg::axpy(&mut gp, inv, &out.grad_positive);
                        gn.push(linalg::scale(&out.grad_negatives[0], inv));
                    }
                    (v, ga, gp, gn)
                }
            };
            total += value * inv_b;

            let g_emb = if normalize { unit_backward(&anchor, anchor_norm, &g_anchor) } else { g_anchor };
            model_grad.accumulate(&self.model.backward(&cache, &g_emb)?, inv_b);
            for (j, g) in std::iter::once((pos, g_pos)).chain(neg_idx.into_iter().zip(g_negs)) {
                let g = if normalize {
                    unit_backward(&used_proxies[j].0, used_proxies[j].1, &g)
                } else {
                    g
                };
                linalg::axpy(&mut proxy_grad[j], inv_b, &g);
            }
        }
        Ok(BatchGradients {
            loss: total,
            model: model_grad,
            proxies: proxy_grad,
            skipped: false,
        })
    }

    fn instance_batch(&self, batch: &[usize]) -> Result<BatchGradients> {
        let normalize = self.cfg.normalize_embeddings_in_loss;
        let mut caches = Vec::with_capacity(batch.len());
        let mut used = Vec::with_capacity(batch.len());
        let mut norms = Vec::with_capacity(batch.len());
        for &i in batch {
            let (emb, cache) = self.model.forward(&self.train_ds.points()[i])?;
            let (e, n) = if normalize { unit(&emb)? } else { (emb, 1.0) };
            caches.push(cache);
            used.push(e);
            norms.push(n);
        }
        let labels: Vec<usize> = batch.iter().map(|&i| self.train_ds.labels()[i]).collect();
        let out = match self.cfg.loss_kind {
            LossKind::NcaBatch => losses::nca_batch_loss(&used, &labels)?,
            _ => losses::semihard_triplet_batch_loss(&used, &labels, Margin::new(self.cfg.margin)?)?,
        };
        let mut model_grad = GradientBundle::zeros_like(&self.model);
        for (k, g) in out.grads.iter().enumerate() {
            let g = if normalize { unit_backward(&used[k], norms[k], g) } else { g.clone() };
            model_grad.accumulate(&self.model.backward(&caches[k], &g)?, 1.0);
        }
        Ok(BatchGradients {
            loss: out.value,
            model: model_grad,
            proxies: vec![vec![0.0; self.proxies.dim()]; self.proxies.len()],
            skipped: out.degenerate,
        })
    }

    fn apply(&mut self, grads: &BatchGradients, lr: f64) -> Result<()> {
        let params = self
            .model
            .param_groups_mut()
            .chain(self.proxies.vectors.iter_mut().map(Vec::as_mut_slice));
        let gs = grads
            .model
            .param_groups()
            .chain(grads.proxies.iter().map(Vec::as_slice));
        self.optimizer.step(params, gs, lr)
    }

    /// Runs one optimization step and returns its loss record.
    pub fn step(&mut self) -> Result<MetricsRecord> {
        let lr = self.cfg.schedule().at(self.step);
        let batch = self.sample_batch();
        let grads = self.batch_gradients(&batch)?;
        self.last_batch = batch;
        if !grads.loss.is_finite() {
            return Err(Error::Numeric(format!(
                "loss became {} at step {}",
                grads.loss,
                self.step + 1
            )));
        }
        if !grads.model.is_finite() || grads.proxies.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient at step {}", self.step + 1)));
        }
        self.record_stats(&grads);
        if grads.skipped {
            log::warn!("step {}: batch has no valid triplet, skipping update", self.step + 1);
        } else {
            self.apply(&grads, lr)?;
        }
        self.step += 1;
        Ok(MetricsRecord {
            step: self.step,
            loss: grads.loss,
            learning_rate: lr,
            recall_at_k: None,
            nmi: None,
            epsilon: None,
            wall_clock_ms: self.started.elapsed().as_millis() as u64,
        })
    }

    fn record_stats(&mut self, grads: &BatchGradients) {
        let b = self.last_batch.len();
        if grads.skipped {
            self.stats.skipped_steps += 1;
        }
        if self.cfg.loss_kind.uses_proxies() {
            self.stats.anchors += b;
            self.stats.positive_proxy_refs += b;
            self.stats.negative_proxy_refs += b * (self.proxies.len() - 1);
        } else {
            self.stats.anchors += b;
            let labels: Vec<usize> = self.last_batch.iter().map(|&i| self.train_ds.labels()[i]).collect();
            let pairs = (0..b)
                .flat_map(|a| (0..b).map(move |p| (a, p)))
                .filter(|&(a, p)| a != p && labels[a] == labels[p])
                .count();
            self.stats.sampled_triplets += pairs;
        }
    }

    /// Recall@K, NMI and ε on the evaluation split.
    pub fn evaluate(&self) -> Result<EvalReport> {
        evaluate_model(
            &self.model,
            self.cfg.loss_kind.uses_proxies().then_some(&self.proxies),
            self.eval_ds,
            &self.eval_cfg,
        )
    }

    /// Runs the remaining steps, handing every record to `sink` as it is
    /// produced. `on_eval` fires after each evaluation record (used for
    /// checkpointing).
    pub fn run(
        &mut self,
        sink: &mut dyn FnMut(&MetricsRecord) -> Result<()>,
        on_eval: &mut dyn FnMut(&Trainer<'a>) -> Result<()>,
    ) -> Result<()> {
        while self.step < self.cfg.steps {
            let rec = self.step()?;
            sink(&rec)?;
            if self.step % self.cfg.eval_every == 0 || self.step == self.cfg.steps {
                let report = self.evaluate()?;
                sink(&MetricsRecord {
                    recall_at_k: Some(report.recall_at),
                    nmi: Some(report.nmi),
                    epsilon: report.epsilon,
                    wall_clock_ms: self.started.elapsed().as_millis() as u64,
                    ..rec
                })?;
                on_eval(self)?;
            }
        }
        Ok(())
    }
}

/// Embeds `ds` and scores retrieval and clustering. `ε` is reported only
/// when proxies are given.
pub fn evaluate_model(
    model: &EmbeddingModel,
    proxies: Option<&ProxySet>,
    ds: &Dataset,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let emb = model.embed_all(ds.points())?;
    let ks: Vec<usize> = cfg.ks.iter().copied().filter(|&k| k < ds.len()).collect();
    let retrieval = eval::recall_at_k(&emb, ds.labels(), &ks)?;
    let clustering = eval::cluster_and_score(&emb, ds.labels(), cfg.seed, cfg.kmeans_max_iters)?;
    let epsilon = proxies
        .map(|p| proxies::proxy_approx_error(&emb, &p.vectors, DistanceKind::SquaredEuclidean))
        .transpose()?
        .map(|e| e.epsilon);
    Ok(EvalReport {
        recall_at: retrieval.recall_at,
        nmi: clustering.nmi,
        epsilon,
        num_queries: retrieval.num_queries,
        kmeans_inertia: clustering.kmeans_inertia,
    })
}

/// Result of a complete in-memory run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EmbeddingModel,
    pub proxies: ProxySet,
    pub records: Vec<MetricsRecord>,
    pub stats: TrainStats,
}

/// Initializes from `model_cfg` and trains for `cfg.steps` steps, collecting
/// the metrics stream in memory.
pub fn train(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    eval_cfg: &EvalConfig,
    train_ds: &Dataset,
    eval_ds: &Dataset,
) -> Result<TrainOutcome> {
    let (model, proxies) = init_run(cfg, model_cfg, train_ds)?;
    train_from(cfg, eval_cfg, model, proxies, train_ds, eval_ds)
}

pub fn train_from(
    cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
    model: EmbeddingModel,
    proxies: ProxySet,
    train_ds: &Dataset,
    eval_ds: &Dataset,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg.clone(), eval_cfg.clone(), model, proxies, train_ds, eval_ds)?;
    let mut records = Vec::new();
    trainer.run(&mut |r| {
        records.push(r.clone());
        Ok(())
    }, &mut |_| Ok(()))?;
    let (model, proxies, stats) = trainer.into_parts();
    Ok(TrainOutcome {
        model,
        proxies,
        records,
        stats,
    })
}

/// Size of the triplet space versus what one batch can cover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletSpaceReport {
    pub num_points: usize,
    pub num_classes: usize,
    pub balanced: bool,
    /// `Σ_c n_c (n_c − 1)(n − n_c)`: anchor, distinct same-class positive,
    /// other-class negative.
    pub total_triplets: u128,
    /// `n²(n−k)(k−1)/k²`, only for balanced class sizes.
    pub closed_form: Option<u128>,
    /// Ordered triplets of distinct batch members, `b(b−1)(b−2)`.
    pub per_batch_capacity: u128,
    /// `total_triplets / per_batch_capacity`.
    pub batches_to_cover: f64,
}

pub fn triplet_space_report(labels: &[usize], batch_size: usize) -> TripletSpaceReport {
    let mut counts: BTreeMap<usize, u128> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let n = labels.len() as u128;
    let k = counts.len() as u128;
    let total: u128 = counts.values().map(|&c| c * c.saturating_sub(1) * (n - c)).sum();
    let balanced = k > 0 && counts.values().all(|&c| c * k == n);
    let closed_form = balanced.then(|| n * n * (n - k) * (k - 1) / (k * k));
    let b = batch_size as u128;
    let per_batch = b * b.saturating_sub(1) * b.saturating_sub(2);
    TripletSpaceReport {
        num_points: labels.len(),
        num_classes: counts.len(),
        balanced,
        total_triplets: total,
        closed_form,
        per_batch_capacity: per_batch,
        batches_to_cover: if per_batch > 0 { total as f64 / per_batch as f64 } else { f64::INFINITY },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split_zero_shot, SynthConfig};

    fn tiny() -> (Dataset, Dataset) {
        let ds = generate_synthetic(&SynthConfig {
            num_classes: 4,
            points_per_class: 6,
            ambient_dim: 5,
            seed: 2,
            ..Default::default()
        })
        .unwrap();
        let (a, b, _) = split_zero_shot(&ds, 0.5, 0, true).unwrap();
        (a, b)
    }

    fn small_cfg() -> (TrainConfig, ModelConfig, EvalConfig) {
        (
            TrainConfig { steps: 20, eval_every: 7, batch_size: 4, ..Default::default() },
            ModelConfig { embed_dim: 3, ..Default::default() },
            EvalConfig { ks: vec![1, 2], ..Default::default() },
        )
    }

    #[test]
    fn zero_steps_is_a_no_op() {
        let (tr, te) = tiny();
        let (mut cfg, mcfg, ecfg) = small_cfg();
        cfg.steps = 0;
        let (model, proxies) = init_run(&cfg, &mcfg, &tr).unwrap();
        let out = train_from(&cfg, &ecfg, model.clone(), proxies.clone(), &tr, &te).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.model, model);
        assert_eq!(out.proxies, proxies);
    }

    #[test]
    fn record_counts_follow_eval_schedule() {
        let (tr, te) = tiny();
        let (cfg, mcfg, ecfg) = small_cfg();
        let out = train(&cfg, &mcfg, &ecfg, &tr, &te).unwrap();
        let evals = out.records.iter().filter(|r| r.is_eval()).count();
        assert_eq!(evals, cfg.steps.div_ceil(cfg.eval_every));
        assert_eq!(out.records.len() - evals, cfg.steps);
    }

    #[test]
    fn learning_rate_decays_stepwise() {
        let (tr, te) = tiny();
        let (mut cfg, mcfg, ecfg) = small_cfg();
        cfg.lr_decay_every = 3;
        let out = train(&cfg, &mcfg, &ecfg, &tr, &te).unwrap();
        for r in out.records.iter().filter(|r| !r.is_eval()) {
            let s = r.step - 1;
            assert_eq!(r.learning_rate, cfg.learning_rate * cfg.lr_decay_rate.powi((s / 3) as i32));
        }
    }

    #[test]
    fn every_loss_kind_runs() {
        let (tr, te) = tiny();
        let (mut cfg, mcfg, ecfg) = small_cfg();
        for kind in [LossKind::ProxyNca, LossKind::ProxyTriplet, LossKind::NcaBatch, LossKind::TripletSemihard] {
            for normalize in [false, true] {
                cfg.loss_kind = kind;
                cfg.normalize_embeddings_in_loss = normalize;
                let out = train(&cfg, &mcfg, &ecfg, &tr, &te).unwrap();
                assert!(out.records.iter().all(|r| r.loss.is_finite()));
            }
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let (tr, _) = tiny();
        let (_, mcfg, _) = small_cfg();
        for cfg in [
            TrainConfig { batch_size: 1, ..Default::default() },
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { lr_decay_rate: 1.5, ..Default::default() },
            TrainConfig { margin: -1.0, ..Default::default() },
        ] {
            assert!(matches!(init_run(&cfg, &mcfg, &tr), Err(Error::Config(_))));
        }
    }

    #[test]
    fn diverging_run_aborts_with_numeric_error() {
        let (tr, te) = tiny();
        let (mut cfg, mcfg, ecfg) = small_cfg();
        cfg.optimizer = OptimizerKind::Sgd;
        cfg.loss_kind = LossKind::ProxyNca;
        cfg.learning_rate = 1e8;
        cfg.steps = 200;
        let err = train(&cfg, &mcfg, &ecfg, &tr, &te).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "{err}");
    }

    #[test]
    fn triplet_counts() {
        let r = triplet_space_report(&[0, 0, 1, 1], 32);
        assert_eq!(r.total_triplets, 8);
        assert_eq!(r.closed_form, Some(8));
        assert_eq!(triplet_space_report(&[0, 0, 0], 4).total_triplets, 0);
        let r = triplet_space_report(&[0, 0, 0, 1], 4);
        assert!(!r.balanced);
        assert_eq!(r.total_triplets, 6);
    }
}
