//! Run configuration file and `--set section.key=value` overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use proxydml::bounds::BoundsConfig;
use proxydml::data::{generate_synthetic, load_csv, Dataset, SplitSpec, SynthConfig};
use proxydml::embedding::ModelConfig;
use proxydml::trainer::{EvalConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Where the data comes from and how it is split. Without `csv` the
/// synthetic generator is used; without `split` the classes are split by
/// `train_fraction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub csv: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub synthetic: SynthConfig,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub ordered_split: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            csv: None,
            split: None,
            synthetic: SynthConfig::default(),
            train_fraction: 0.5,
            split_seed: 0,
            ordered_split: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub data: DataSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub bounds: BoundsConfig,
}

/// Train and zero-shot evaluation splits plus the split that produced them.
pub struct LoadedData {
    pub full: Dataset,
    pub train: Dataset,
    pub test: Dataset,
    pub split: SplitSpec,
}

impl RunConfigFile {
    /// Reads `path` (or starts from defaults), applies overrides and
    /// resolves data paths relative to the config file.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let (mut value, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
                (v, p.parent().map(Path::to_path_buf))
            }
            None => (serde_json::to_value(RunConfigFile::default())?, None),
        };
        // Round-trip once so that overrides land on a fully materialized tree.
        let parsed: RunConfigFile = serde_json::from_value(value).context("invalid run config")?;
        value = serde_json::to_value(parsed)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: RunConfigFile = serde_json::from_value(value).context("invalid run config after overrides")?;
        if let Some(base) = base.filter(|b| !b.as_os_str().is_empty()) {
            for p in [&mut cfg.data.csv, &mut cfg.data.split].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.train.validate()?;
        if self.data.csv.is_none() {
            self.data.synthetic.validate()?;
        }
        if self.model.embed_dim == 0 {
            bail!("model.embed_dim must be >= 1");
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            bail!("eval.ks must be non-empty and positive");
        }
        Ok(())
    }

    pub fn to_json(&self) -> anyhow::Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn load_data(&self) -> anyhow::Result<LoadedData> {
        let full = match &self.data.csv {
            Some(p) => load_csv(p)?,
            None => generate_synthetic(&self.data.synthetic)?,
        };
        let split = match &self.data.split {
            Some(p) => SplitSpec::load_json(p)?,
            None => SplitSpec::new(
                full.num_classes(),
                self.data.train_fraction,
                self.data.split_seed,
                self.data.ordered_split,
            )?,
        };
        let (train, test) = split.apply(&full)?;
        Ok(LoadedData {
            full,
            train,
            test,
            split,
        })
    }
}

/// Applies `section.key[.key...]=value`. The value is parsed as JSON when
/// possible and taken as a string otherwise, so `train.loss_kind=proxy_nca`
/// and `train.steps=10` both work. Only existing keys may be set.
pub fn apply_override(root: &mut Value, assignment: &str) -> anyhow::Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .with_context(|| format!("override `{assignment}` is not of the form section.key=value"))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.len() < 2 || keys.iter().any(|k| k.is_empty()) {
        bail!("override path `{path}` must look like section.key");
    }
    let mut node = root;
    for (i, key) in keys.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .with_context(|| format!("`{}` is not a section", keys[..i].join(".")))?;
        node = obj
            .get_mut(*key)
            .with_context(|| format!("unknown config key `{}`", keys[..=i].join(".")))?;
    }
    *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_replace_leaves() {
        let mut v = serde_json::to_value(RunConfigFile::default()).unwrap();
        apply_override(&mut v, "train.steps=7").unwrap();
        apply_override(&mut v, "train.loss_kind=triplet_semihard").unwrap();
        apply_override(&mut v, "data.synthetic.num_classes=4").unwrap();
        apply_override(&mut v, "model.hidden=[8]").unwrap();
        let cfg: RunConfigFile = serde_json::from_value(v).unwrap();
        assert_eq!(cfg.train.steps, 7);
        assert_eq!(cfg.data.synthetic.num_classes, 4);
        assert_eq!(cfg.model.hidden, vec![8]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = serde_json::to_value(RunConfigFile::default()).unwrap();
        assert!(apply_override(&mut v, "train.stepz=7").is_err());
        assert!(apply_override(&mut v, "train=7").is_err());
        assert!(apply_override(&mut v, "train.steps").is_err());
        let text = r#"{"train": {"steps": 3, "bogus": 1}}"#;
        assert!(serde_json::from_str::<RunConfigFile>(text).is_err());
    }

    #[test]
    fn materialized_config_has_explicit_seeds() {
        let json = RunConfigFile::default().to_json().unwrap();
        let v: Value = serde_json::from_str(&json).unwrap();
        for path in [["train", "seed"], ["model", "seed"], ["eval", "seed"], ["bounds", "seed"]] {
            assert!(v[path[0]][path[1]].is_u64(), "{path:?}");
        }
        assert!(v["data"]["synthetic"]["seed"].is_u64());
        assert!(v["data"]["split_seed"].is_u64());
    }

    #[test]
    fn relative_data_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"data": {"csv": "d/data.csv"}}"#).unwrap();
        let cfg = RunConfigFile::load(Some(&path), &[]).unwrap();
        assert_eq!(cfg.data.csv.unwrap(), dir.path().join("d/data.csv"));
    }
}
