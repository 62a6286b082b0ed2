//! Labeled vector datasets, synthetic generation, CSV I/O and class-level
//! (zero-shot) splitting.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{seeded_rng, Error, Result};

/// Labeled points. Labels are always the contiguous range `0..num_classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    points: Vec<Vec<f64>>,
    labels: Vec<usize>,
    name: String,
}

impl Dataset {
    /// Builds a dataset, checking dimensions, lengths and label contiguity.
    pub fn new(points: Vec<Vec<f64>>, labels: Vec<usize>, name: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::config("dataset has no points"));
        }
        if points.len() != labels.len() {
            return Err(Error::shape(points.len(), labels.len()));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(Error::config("points must have dimension >= 1"));
        }
        for p in &points {
            if p.len() != dim {
                return Err(Error::shape(dim, p.len()));
            }
        }
        let present: BTreeSet<usize> = labels.iter().copied().collect();
        let max = *present.iter().next_back().unwrap_or(&0);
        if present.len() != max + 1 {
            return Err(Error::config(format!(
                "labels must cover 0..{} contiguously, found {} distinct",
                max + 1,
                present.len()
            )));
        }
        Ok(Dataset {
            points,
            labels,
            name: name.into(),
        })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Indices of the points of each class, in dataset order.
    pub fn class_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.num_classes()];
        for (i, &l) in self.labels.iter().enumerate() {
            members[l].push(i);
        }
        members
    }

    /// Writes `label,v1,...,vD` rows with round-trip float formatting.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        for (p, l) in self.points.iter().zip(&self.labels) {
            write!(out, "{l}")?;
            for v in p {
                write!(out, ",{v:?}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Restricts to the given original class ids, relabeling them to
    /// `0..classes.len()` in ascending id order.
    fn subset_by_classes(&self, classes: &BTreeSet<usize>, name: String) -> Result<Dataset> {
        let remap: HashMap<usize, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (p, l) in self.points.iter().zip(&self.labels) {
            if let Some(&new) = remap.get(l) {
                points.push(p.clone());
                labels.push(new);
            }
        }
        Dataset::new(points, labels, name)
    }
}

/// Parameters of the Gaussian-blob generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub points_per_class: usize,
    pub ambient_dim: usize,
    pub class_center_scale: f64,
    pub intra_class_stddev: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 16,
            points_per_class: 50,
            ambient_dim: 32,
            class_center_scale: 10.0,
            intra_class_stddev: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.points_per_class == 0 || self.ambient_dim == 0 {
            return Err(Error::config("synthetic counts must all be >= 1"));
        }
        if !(self.intra_class_stddev >= 0.0) || !self.intra_class_stddev.is_finite() {
            return Err(Error::config("intra_class_stddev must be finite and >= 0"));
        }
        if !(self.class_center_scale >= 0.0) || !self.class_center_scale.is_finite() {
            return Err(Error::config("class_center_scale must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Class `c` gets a center uniform in `[-scale, scale]^D`; its points are the
/// center plus isotropic Gaussian noise. Points are emitted class by class.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = seeded_rng(cfg.seed);
    let s = cfg.class_center_scale;
    let centers: Vec<Vec<f64>> = (0..cfg.num_classes)
        .map(|_| {
            (0..cfg.ambient_dim)
                .map(|_| if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 })
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0, cfg.intra_class_stddev)
        .map_err(|e| Error::config(format!("noise distribution: {e}")))?;
    let mut points = Vec::with_capacity(cfg.num_classes * cfg.points_per_class);
    let mut labels = Vec::with_capacity(points.capacity());
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..cfg.points_per_class {
            let p = center
                .iter()
                .map(|&m| {
                    if cfg.intra_class_stddev > 0.0 {
                        m + noise.sample(&mut rng)
                    } else {
                        m
                    }
                })
                .collect();
            points.push(p);
            labels.push(c);
        }
    }
    Dataset::new(points, labels, format!("synthetic-{}", cfg.seed))
}

/// Reads `label,v1,...,vD` rows. Labels may be any integers; they are
/// remapped to `0..L` in order of first appearance.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut remap: HashMap<i64, usize> = HashMap::new();
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label_field = fields.next().unwrap_or("").trim();
        let label: i64 = label_field
            .parse()
            .map_err(|_| parse_err(line_no, format!("label {label_field:?} is not an integer")))?;
        let values = fields
            .map(|f| {
                let f = f.trim();
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(line_no, format!("field {f:?} is not a finite number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(parse_err(line_no, "row has no feature values".into()));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(parse_err(
                    line_no,
                    format!("ragged row: expected {d} values, found {}", values.len()),
                ))
            }
            _ => {}
        }
        let next = remap.len();
        labels.push(*remap.entry(label).or_insert(next));
        points.push(values);
    }
    if points.is_empty() {
        return Err(parse_err(0, "empty dataset file".into()));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(points, labels, name)
}

/// Which original class ids land on each side of a zero-shot split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_class_ids: BTreeSet<usize>,
    pub test_class_ids: BTreeSet<usize>,
}

impl SplitSpec {
    /// Picks `floor(L * train_fraction)` training classes: the lowest ids
    /// when `ordered`, otherwise a seeded shuffle.
    pub fn new(num_classes: usize, train_fraction: f64, seed: u64, ordered: bool) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::config(format!(
                "train_fraction must lie in (0, 1), got {train_fraction}"
            )));
        }
        let n_train = (num_classes as f64 * train_fraction).floor() as usize;
        if n_train == 0 || n_train >= num_classes {
            return Err(Error::config(format!(
                "splitting {num_classes} classes at {train_fraction} leaves one side empty"
            )));
        }
        let mut ids: Vec<usize> = (0..num_classes).collect();
        if !ordered {
            ids.shuffle(&mut seeded_rng(seed));
        }
        Ok(SplitSpec {
            train_class_ids: ids[..n_train].iter().copied().collect(),
            test_class_ids: ids[n_train..].iter().copied().collect(),
        })
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.train_class_ids.is_empty() || self.test_class_ids.is_empty() {
            return Err(Error::config("split leaves one side empty"));
        }
        if !self.train_class_ids.is_disjoint(&self.test_class_ids) {
            return Err(Error::config("train and test class sets overlap"));
        }
        let all: BTreeSet<usize> = self.train_class_ids.union(&self.test_class_ids).copied().collect();
        if all != (0..num_classes).collect() {
            return Err(Error::config(format!(
                "split does not cover exactly the classes 0..{num_classes}"
            )));
        }
        Ok(())
    }

    /// Applies the split; each side is relabeled to contiguous ids in
    /// ascending original-id order.
    pub fn apply(&self, ds: &Dataset) -> Result<(Dataset, Dataset)> {
        self.validate(ds.num_classes())?;
        let train = ds.subset_by_classes(&self.train_class_ids, format!("{}-train", ds.name))?;
        let test = ds.subset_by_classes(&self.test_class_ids, format!("{}-test", ds.name))?;
        Ok((train, test))
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Splits by class so that no test class is ever seen in training.
pub fn split_zero_shot(
    ds: &Dataset,
    train_fraction: f64,
    seed: u64,
    ordered: bool,
) -> Result<(Dataset, Dataset, SplitSpec)> {
    let spec = SplitSpec::new(ds.num_classes(), train_fraction, seed, ordered)?;
    let (train, test) = spec.apply(ds)?;
    Ok((train, test, spec))
}
