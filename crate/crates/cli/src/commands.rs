use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use log::{info, warn};
use proxydml::bounds::{self, BoundReport, BoundsConfig, MAX_ENUMERATED_TRIPLETS};
use proxydml::checkpoint::Checkpoint;
use proxydml::data::{generate_synthetic, load_csv, Dataset, SplitSpec, SynthConfig};
use proxydml::embedding::EmbeddingModel;
use proxydml::eval::{cluster_and_score, recall_at_k, ClusteringResult, RetrievalResult};
use proxydml::proxies::{assign_dynamic, proxy_approx_error, DistanceKind, ProxySet};
use proxydml::trainer::{init_run, MetricsRecord, Trainer};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfigFile;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const SWEEP_FILE: &str = "sweep.csv";

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Writes `value` to `out` when given, otherwise to stdout.
fn emit_json(out: Option<&Path>, value: &impl Serialize) -> anyhow::Result<()> {
    match out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            write_json(p, value)
        }
        // A closed pipe surfaces as an error rather than a panic.
        None => Ok(writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(value)?)?),
    }
}

pub struct GenData {
    pub synth: SynthConfig,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub ordered_split: bool,
    pub out: PathBuf,
}

/// Writes `data.csv`, `split.json`, `synth_config.json` and a `run.json`
/// that trains on them.
pub fn gen_data(args: &GenData) -> anyhow::Result<()> {
    let ds = generate_synthetic(&args.synth)?;
    let split = SplitSpec::new(ds.num_classes(), args.train_fraction, args.split_seed, args.ordered_split)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    ds.save_csv(args.out.join("data.csv"))?;
    split.save_json(args.out.join("split.json"))?;
    write_json(&args.out.join("synth_config.json"), &args.synth)?;
    let mut run = RunConfigFile::default();
    run.data.csv = Some("data.csv".into());
    run.data.split = Some("split.json".into());
    run.data.synthetic = args.synth.clone();
    run.data.train_fraction = args.train_fraction;
    run.data.split_seed = args.split_seed;
    run.data.ordered_split = args.ordered_split;
    write_json(&args.out.join("run.json"), &run)?;
    println!("{}", serde_json::to_string_pretty(&args.synth)?);
    info!("wrote {} rows to {}", ds.len(), args.out.join("data.csv").display());
    Ok(())
}

/// Final numbers of one training run.
#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub num_proxies: usize,
    pub recall_at_1: Option<f64>,
    pub nmi: Option<f64>,
}

fn checkpoint_of(model: &EmbeddingModel, proxies: &ProxySet, step: usize, cfg: &RunConfigFile) -> anyhow::Result<Checkpoint> {
    Ok(Checkpoint {
        model: model.clone(),
        proxies: Some(proxies.clone()),
        step,
        seed: cfg.train.seed,
        config: serde_json::to_value(cfg)?,
    })
}

/// Trains into `out`: `config.json`, `metrics.jsonl` (one flushed line per
/// record), `checkpoint.bin` (latest evaluation) and
/// `checkpoints/step_NNNNNN.bin` per evaluation. A numeric abort leaves the
/// last good checkpoint in place.
pub fn run_training(cfg: &RunConfigFile, out: &Path) -> anyhow::Result<TrainSummary> {
    fs::create_dir_all(out.join("checkpoints")).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join(CONFIG_FILE), cfg.to_json()?)?;
    let data = cfg.load_data()?;
    let (model, proxies) = init_run(&cfg.train, &cfg.model, &data.train)?;
    let num_proxies = proxies.len();
    checkpoint_of(&model, &proxies, 0, cfg)?.save(&out.join(CHECKPOINT_FILE))?;

    let mut metrics = File::create(out.join(METRICS_FILE))?;
    let mut last_eval: Option<MetricsRecord> = None;
    let mut trainer = Trainer::new(cfg.train.clone(), cfg.eval.clone(), model, proxies, &data.train, &data.test)?;
    let result = trainer.run(
        &mut |rec| {
            let mut line = serde_json::to_string(rec)?;
            line.push('\n');
            metrics.write_all(line.as_bytes())?;
            metrics.flush()?;
            if rec.is_eval() {
                last_eval = Some(rec.clone());
            }
            Ok(())
        },
        &mut |t| {
            let ck = Checkpoint {
                model: t.model().clone(),
                proxies: Some(t.proxies().clone()),
                step: t.steps_done(),
                seed: cfg.train.seed,
                config: serde_json::to_value(cfg).map_err(proxydml::Error::from)?,
            };
            ck.save(&out.join("checkpoints").join(format!("step_{:06}.bin", t.steps_done())))?;
            ck.save(&out.join(CHECKPOINT_FILE))
        },
    );
    if let Err(e) = result {
        warn!(
            "run aborted at step {}; {} holds the last good state",
            trainer.steps_done(),
            out.join(CHECKPOINT_FILE).display()
        );
        return Err(e.into());
    }
    Ok(TrainSummary {
        steps: trainer.steps_done(),
        num_proxies,
        recall_at_1: last_eval.as_ref().and_then(|r| r.recall_at_k.as_ref()?.get(&1).copied()),
        nmi: last_eval.and_then(|r| r.nmi),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Side {
    Train,
    Test,
    All,
}

/// Dataset for a checkpoint-based command: an explicit CSV (optionally
/// split), or the data recorded in the checkpoint's config.
fn resolve_dataset(ck: &Checkpoint, csv: Option<&Path>, split: Option<&Path>, side: Side) -> anyhow::Result<Dataset> {
    let (full, spec) = match csv {
        Some(p) => (load_csv(p)?, split.map(SplitSpec::load_json).transpose()?),
        None => {
            let cfg: RunConfigFile =
                serde_json::from_value(ck.config.clone()).context("checkpoint carries no usable run config; pass --data")?;
            let data = cfg.load_data()?;
            (data.full, Some(data.split))
        }
    };
    match (side, spec) {
        (Side::All, _) | (_, None) => Ok(full),
        (side, Some(spec)) => {
            let (train, test) = spec.apply(&full)?;
            Ok(if side == Side::Train { train } else { test })
        }
    }
}

#[derive(Debug, Serialize)]
pub struct EvalOutput {
    pub checkpoint_step: usize,
    pub dataset: String,
    pub retrieval: RetrievalResult,
    pub clustering: ClusteringResult,
    pub epsilon: Option<f64>,
}

pub struct EvalArgs<'a> {
    pub checkpoint: &'a Path,
    pub data: Option<&'a Path>,
    pub split: Option<&'a Path>,
    pub side: Side,
    pub ks: &'a [usize],
    pub seed: u64,
    pub kmeans_max_iters: usize,
}

pub fn eval(args: &EvalArgs) -> anyhow::Result<EvalOutput> {
    let ck = Checkpoint::load(args.checkpoint)?;
    let ds = resolve_dataset(&ck, args.data, args.split, args.side)?;
    let emb = ck.model.embed_all(ds.points())?;
    let retrieval = recall_at_k(&emb, ds.labels(), args.ks)?;
    let clustering = cluster_and_score(&emb, ds.labels(), args.seed, args.kmeans_max_iters)?;
    let epsilon = ck
        .proxies
        .as_ref()
        .map(|p| proxy_approx_error(&emb, &p.vectors, DistanceKind::SquaredEuclidean))
        .transpose()?
        .map(|e| e.epsilon);
    Ok(EvalOutput {
        checkpoint_step: ck.step,
        dataset: ds.name().to_string(),
        retrieval,
        clustering,
        epsilon,
    })
}

pub fn write_eval(out: Option<&Path>, report: &EvalOutput) -> anyhow::Result<()> {
    emit_json(out, report)
}

pub struct VerifyArgs<'a> {
    pub checkpoints: &'a [PathBuf],
    pub data: Option<&'a Path>,
    pub split: Option<&'a Path>,
    pub side: Side,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub margin: Option<f64>,
    pub total_loss_samples: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct CheckpointBounds {
    pub checkpoint: PathBuf,
    pub step: usize,
    pub reports: Vec<BoundReport>,
}

#[derive(Debug, Serialize)]
pub struct VerifyOutput {
    pub checkpoints: Vec<CheckpointBounds>,
    /// `mean_slack` per bound, one entry per checkpoint in step order.
    pub mean_slack_series: BTreeMap<String, Vec<(usize, f64)>>,
    pub total_violations: usize,
}

/// Proxy index for each point: the static label map when it covers the
/// label, the nearest proxy otherwise.
fn proxy_assignment(proxies: &ProxySet, emb: &[Vec<f64>], labels: &[usize]) -> Vec<usize> {
    emb.iter()
        .zip(labels)
        .map(|(e, &l)| {
            proxies
                .label_to_proxy
                .as_ref()
                .and_then(|m| m.get(l).copied())
                .unwrap_or_else(|| assign_dynamic(e, &proxies.vectors).unwrap_or(0))
        })
        .collect()
}

fn population(labels: &[usize]) -> u128 {
    let mut counts: BTreeMap<usize, u128> = BTreeMap::new();
    labels.iter().for_each(|&l| *counts.entry(l).or_default() += 1);
    let n = labels.len() as u128;
    counts.values().map(|&c| c * c.saturating_sub(1) * (n - c)).sum()
}

pub fn verify_bounds(args: &VerifyArgs) -> anyhow::Result<VerifyOutput> {
    if args.checkpoints.is_empty() {
        bail!("verify-bounds needs at least one checkpoint");
    }
    let mut results = Vec::new();
    for path in args.checkpoints {
        let ck = Checkpoint::load(path)?;
        let proxies = ck.proxies.as_ref().context("checkpoint has no proxies")?;
        let mut bcfg: BoundsConfig = ck
            .config
            .get("bounds")
            .map(|b| serde_json::from_value(b.clone()))
            .transpose()?
            .unwrap_or_default();
        bcfg.samples = args.samples.unwrap_or(bcfg.samples);
        bcfg.seed = args.seed.unwrap_or(bcfg.seed);
        bcfg.margin = args.margin.unwrap_or(bcfg.margin);
        bcfg.total_loss_samples = args.total_loss_samples.or(bcfg.total_loss_samples);
        let ds = resolve_dataset(&ck, args.data, args.split, args.side)?;
        if bcfg.total_loss_samples.is_none() && population(ds.labels()) > MAX_ENUMERATED_TRIPLETS as u128 {
            info!("triplet population too large to enumerate; sampling {} triplets", bcfg.samples);
            bcfg.total_loss_samples = Some(bcfg.samples);
        }
        let emb = ck.model.embed_all(ds.points())?;
        let assignment = proxy_assignment(proxies, &emb, ds.labels());
        let reports = bounds::verify_all(&emb, ds.labels(), &proxies.vectors, &assignment, &bcfg)?;
        results.push(CheckpointBounds {
            checkpoint: path.clone(),
            step: ck.step,
            reports,
        });
    }
    results.sort_by_key(|r| r.step);
    let mut series: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for r in &results {
        for b in &r.reports {
            series.entry(b.bound_name.clone()).or_default().push((r.step, b.mean_slack));
        }
    }
    let total_violations = results.iter().flat_map(|r| &r.reports).map(|b| b.violations).sum();
    Ok(VerifyOutput {
        checkpoints: results,
        mean_slack_series: series,
        total_violations,
    })
}

pub fn write_verify(out: Option<&Path>, report: &VerifyOutput) -> anyhow::Result<()> {
    emit_json(out, report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub num_proxies: Option<usize>,
    pub recall_at_1: Option<f64>,
    pub nmi: Option<f64>,
    pub status: String,
}

impl SweepRow {
    fn csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.ratio,
            self.num_proxies.map(|n| n.to_string()).unwrap_or_default(),
            opt(self.recall_at_1),
            opt(self.nmi),
            self.status.replace([',', '\n'], ";")
        )
    }
}

fn sweep_one(base: &RunConfigFile, ratio: f64, out: &Path) -> SweepRow {
    let mut cfg = base.clone();
    cfg.train.proxy_ratio = ratio;
    let dir = out.join(format!("ratio_{ratio}"));
    match run_training(&cfg, &dir) {
        Ok(s) => SweepRow {
            ratio,
            num_proxies: Some(s.num_proxies),
            recall_at_1: s.recall_at_1,
            nmi: s.nmi,
            status: "ok".into(),
        },
        Err(e) => {
            warn!("ratio {ratio} failed: {e:#}");
            SweepRow {
                ratio,
                num_proxies: None,
                recall_at_1: None,
                nmi: None,
                status: format!("failed: {e:#}"),
            }
        }
    }
}

/// One training run per ratio under `out/ratio_<r>/`, summarized in
/// `out/sweep.csv`. A failing run becomes a row with its error.
pub fn sweep_proxy_ratio(base: &RunConfigFile, ratios: &[f64], parallel: bool, out: &Path) -> anyhow::Result<Vec<SweepRow>> {
    if ratios.is_empty() {
        bail!("no ratios given");
    }
    if let Some(r) = ratios.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
        bail!("proxy ratios must be positive, got {r}");
    }
    fs::create_dir_all(out)?;
    let rows: Vec<SweepRow> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = ratios.iter().map(|&r| s.spawn(move || sweep_one(base, r, out))).collect();
            handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
        })
    } else {
        ratios.iter().map(|&r| sweep_one(base, r, out)).collect()
    };
    let mut csv = String::from("ratio,num_proxies,recall_at_1,nmi,status\n");
    for r in &rows {
        csv.push_str(&r.csv_line());
        csv.push('\n');
    }
    fs::write(out.join(SWEEP_FILE), csv)?;
    Ok(rows)
}

/// Convergence summary of one metrics stream.
#[derive(Debug, Clone, PartialEq)]
pub struct RunCurve {
    pub name: String,
    pub steps_to_threshold: Option<usize>,
    pub final_recall_at_1: f64,
}

pub fn read_metrics(path: &Path) -> anyhow::Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}: bad metrics record", path.display(), i + 1)))
        .collect()
}

/// First evaluation step with recall@1 ≥ `threshold`, and the final recall@1.
pub fn curve(name: &str, records: &[MetricsRecord], threshold: f64) -> anyhow::Result<RunCurve> {
    let evals: Vec<(usize, f64)> = records
        .iter()
        .filter_map(|r| Some((r.step, *r.recall_at_k.as_ref()?.get(&1)?)))
        .collect();
    let Some(&(_, last)) = evals.last() else {
        bail!("{name} has no recall@1 records");
    };
    Ok(RunCurve {
        name: name.to_string(),
        steps_to_threshold: evals.iter().find(|(_, r)| *r >= threshold).map(|(s, _)| *s),
        final_recall_at_1: last,
    })
}

/// How many times faster `a` reaches the threshold than `b`.
pub fn speedup(a: Option<usize>, b: Option<usize>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) => Some(b as f64 / a.max(1) as f64),
        (Some(_), None) => Some(f64::INFINITY),
        (None, Some(_)) => Some(0.0),
        (None, None) => None,
    }
}

fn fmt_steps(s: Option<usize>) -> String {
    s.map_or_else(|| "∞".to_string(), |s| s.to_string())
}

fn fmt_ratio(r: Option<f64>) -> String {
    match r {
        None => "n/a".into(),
        Some(r) if r.is_infinite() => "∞".into(),
        Some(r) => format!("{r:.3}"),
    }
}

pub fn compare(files: &[PathBuf], threshold: f64) -> anyhow::Result<(Vec<RunCurve>, Value)> {
    if files.len() < 2 {
        bail!("compare needs at least two metrics files");
    }
    let curves = files
        .iter()
        .map(|f| curve(&f.display().to_string(), &read_metrics(f)?, threshold))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let runs: Vec<Value> = curves
        .iter()
        .map(|c| {
            json!({
                "file": c.name,
                "steps_to_threshold": c.steps_to_threshold.map_or(json!("∞"), |s| json!(s)),
                "final_recall_at_1": c.final_recall_at_1,
            })
        })
        .collect();
    let mut pairs = Vec::new();
    for a in &curves {
        for b in &curves {
            if a.name != b.name {
                let r = speedup(a.steps_to_threshold, b.steps_to_threshold);
                pairs.push(json!({
                    "faster": a.name,
                    "slower": b.name,
                    "speedup": match r { Some(r) if r.is_finite() => json!(r), other => json!(fmt_ratio(other)) },
                }));
            }
        }
    }
    let report = json!({ "threshold": threshold, "runs": runs, "speedups": pairs });
    Ok((curves, report))
}

pub fn print_compare(curves: &[RunCurve], threshold: f64) {
    println!("recall@1 threshold {threshold}");
    println!("{:<48} {:>12} {:>10}", "run", "steps", "final r@1");
    for c in curves {
        println!("{:<48} {:>12} {:>10.4}", c.name, fmt_steps(c.steps_to_threshold), c.final_recall_at_1);
    }
    for (i, a) in curves.iter().enumerate() {
        for b in &curves[i + 1..] {
            println!(
                "{} vs {}: speedup {}",
                a.name,
                b.name,
                fmt_ratio(speedup(a.steps_to_threshold, b.steps_to_threshold))
            );
        }
    }
}
