//! Flat `key = value` pipeline configuration with two presets.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::checkpoint::parse_key_values;
use crate::error::{Error, Result};
use crate::eval::ClassifierConfig;
use crate::layer::{Aggregator, CoefficientRule};
use crate::synth::SyntheticSpec;
use crate::transe::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Paper,
    Desk,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::config("preset", format!("unknown preset {other:?} (paper, desk)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Seeds generation and both training stages.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub synth: SyntheticSpec,
    pub kge: TrainConfig,
    pub kqgc: TrainConfig,
    pub aggregator: Aggregator,
    pub coefficient_rule: CoefficientRule,
    pub layers: usize,
    /// TransE snapshot fed to the convolution; 0 means the final table.
    pub kqgc_input_epoch: usize,
    pub classifier: ClassifierConfig,
    /// Also write per-brand PR curves as CSV.
    pub pr_curves: bool,
}

impl PipelineConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Paper => {
                let kge = TrainConfig::paper();
                let kqgc = TrainConfig {
                    neg_ratio: 3,
                    checkpoint_every: 0,
                    ..kge.clone()
                };
                PipelineConfig {
                    seed: 0,
                    out_dir: PathBuf::from("out"),
                    synth: SyntheticSpec::desk(),
                    kge,
                    kqgc,
                    aggregator: Aggregator::Mean,
                    coefficient_rule: CoefficientRule::Ratio,
                    layers: 1,
                    kqgc_input_epoch: 5_000,
                    classifier: ClassifierConfig::default(),
                    pr_curves: false,
                }
            }
            Preset::Desk => {
                let kge = TrainConfig {
                    epochs: 200,
                    batch_size: 256,
                    learning_rate: 0.01,
                    margin: 1.0,
                    neg_ratio: 1,
                    dim: 16,
                    seed: 0,
                    checkpoint_every: 100,
                    normalize_entities: true,
                    fan_out: 10,
                };
                let kqgc = TrainConfig {
                    epochs: 20,
                    neg_ratio: 3,
                    checkpoint_every: 0,
                    ..kge.clone()
                };
                PipelineConfig {
                    seed: 0,
                    out_dir: PathBuf::from("out"),
                    synth: SyntheticSpec::desk(),
                    kge,
                    kqgc,
                    aggregator: Aggregator::Mean,
                    coefficient_rule: CoefficientRule::Ratio,
                    layers: 1,
                    kqgc_input_epoch: 0,
                    classifier: ClassifierConfig::default(),
                    pr_curves: false,
                }
            }
        }
    }

    /// Preset, then the file's keys, then `overrides`.
    pub fn load(
        preset: Preset,
        file: Option<&Path>,
        overrides: &BTreeMap<String, String>,
    ) -> Result<Self> {
        let mut cfg = Self::preset(preset);
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let mut kv = parse_key_values(&text)?;
            // A `preset` key in the file picks the starting point.
            if let Some(p) = kv.remove("preset") {
                if overrides.get("preset").is_none() {
                    cfg = Self::preset(p.parse()?);
                }
            }
            cfg.apply(&kv)?;
        }
        let mut rest = overrides.clone();
        rest.remove("preset");
        cfg.apply(&rest)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, kv: &BTreeMap<String, String>) -> Result<()> {
        for (k, v) in kv {
            self.set(k, v)?;
        }
        Ok(())
    }

    fn sync_seeds(&mut self) {
        self.synth.seed = self.seed;
        self.kge.seed = self.seed;
        self.kqgc.seed = self.seed;
        self.kqgc.dim = self.kge.dim;
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::config(key, format!("cannot parse {v:?}")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(Error::config(key, format!("expected true or false, found {v:?}"))),
            }
        }
        let s = &mut self.synth;
        match key {
            "seed" => self.seed = num(key, value)?,
            "out" | "out_dir" => self.out_dir = PathBuf::from(value),
            "aggregator" => {
                self.aggregator = Aggregator::parse(value).ok_or_else(|| {
                    Error::config(key, format!("unknown aggregator {value:?} (mean, attn1, attn2)"))
                })?
            }
            "coefficient_rule" => {
                self.coefficient_rule = match value {
                    "ratio" => CoefficientRule::Ratio,
                    "softmax" => CoefficientRule::Softmax,
                    _ => return Err(Error::config(key, format!("unknown rule {value:?} (ratio, softmax)"))),
                }
            }
            "layers" => self.layers = num(key, value)?,
            "kqgc_input_epoch" => self.kqgc_input_epoch = num(key, value)?,
            "pr_curves" => self.pr_curves = flag(key, value)?,

            "num_users" => s.num_users = num(key, value)?,
            "num_items" => s.num_items = num(key, value)?,
            "num_attributes" => s.num_attributes = num(key, value)?,
            "num_clusters" => s.num_clusters = num(key, value)?,
            "intra_cluster_purchase_prob" => s.intra_cluster_purchase_prob = num(key, value)?,
            "cross_cluster_purchase_prob" => s.cross_cluster_purchase_prob = num(key, value)?,
            "attr_per_item" => s.attr_per_item = num(key, value)?,
            "attr_per_user" => s.attr_per_user = num(key, value)?,
            "attr_noise" => s.attr_noise = num(key, value)?,
            "baseline_noise_std" => s.noise_std = num(key, value)?,

            "dim" => self.kge.dim = num(key, value)?,
            "checkpoint_every" => self.kge.checkpoint_every = num(key, value)?,
            "normalize_entities" => self.kge.normalize_entities = flag(key, value)?,
            "kge_epochs" => self.kge.epochs = num(key, value)?,
            "kge_batch_size" => self.kge.batch_size = num(key, value)?,
            "kge_learning_rate" => self.kge.learning_rate = num(key, value)?,
            "kge_margin" => self.kge.margin = num(key, value)?,
            "kge_neg_ratio" => self.kge.neg_ratio = num(key, value)?,
            "kqgc_epochs" => self.kqgc.epochs = num(key, value)?,
            "kqgc_batch_size" => self.kqgc.batch_size = num(key, value)?,
            "kqgc_learning_rate" => self.kqgc.learning_rate = num(key, value)?,
            "kqgc_margin" => self.kqgc.margin = num(key, value)?,
            "kqgc_neg_ratio" => self.kqgc.neg_ratio = num(key, value)?,
            "fan_out" => self.kqgc.fan_out = num(key, value)?,

            "clf_l2" => self.classifier.l2 = num(key, value)?,
            "clf_iterations" => self.classifier.iterations = num(key, value)?,
            "clf_learning_rate" => self.classifier.learning_rate = num(key, value)?,
            _ => return Err(Error::config(key, "unknown configuration key")),
        }
        self.sync_seeds();
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.kge.validate()?;
        self.kqgc.validate()?;
        if self.kge.dim != self.kqgc.dim {
            return Err(Error::config("dim", "both stages must share the embedding width"));
        }
        if self.layers == 0 {
            return Err(Error::config("layers", "must be >= 1"));
        }
        if self.kqgc_input_epoch > 0 {
            let every = self.kge.checkpoint_every;
            let reachable = self.kqgc_input_epoch == self.kge.epochs
                || (every > 0 && self.kqgc_input_epoch.is_multiple_of(every) && self.kqgc_input_epoch <= self.kge.epochs);
            if !reachable {
                return Err(Error::config(
                    "kqgc_input_epoch",
                    format!(
                        "{} is neither the final epoch ({}) nor a multiple of checkpoint_every ({every})",
                        self.kqgc_input_epoch, self.kge.epochs
                    ),
                ));
            }
        }
        if !(self.classifier.learning_rate > 0.0 && self.classifier.l2 >= 0.0) {
            return Err(Error::config("clf_learning_rate", "must be > 0 with clf_l2 >= 0"));
        }
        Ok(())
    }

    /// Every key accepted by [`set`](Self::set) with its current value.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let s = &self.synth;
        let rule = match self.coefficient_rule {
            CoefficientRule::Ratio => "ratio",
            CoefficientRule::Softmax => "softmax",
        };
        let pairs: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("out", self.out_dir.display().to_string()),
            ("aggregator", self.aggregator.name().to_string()),
            ("coefficient_rule", rule.to_string()),
            ("layers", self.layers.to_string()),
            ("kqgc_input_epoch", self.kqgc_input_epoch.to_string()),
            ("pr_curves", self.pr_curves.to_string()),
            ("num_users", s.num_users.to_string()),
            ("num_items", s.num_items.to_string()),
            ("num_attributes", s.num_attributes.to_string()),
            ("num_clusters", s.num_clusters.to_string()),
            ("intra_cluster_purchase_prob", s.intra_cluster_purchase_prob.to_string()),
            ("cross_cluster_purchase_prob", s.cross_cluster_purchase_prob.to_string()),
            ("attr_per_item", s.attr_per_item.to_string()),
            ("attr_per_user", s.attr_per_user.to_string()),
            ("attr_noise", s.attr_noise.to_string()),
            ("baseline_noise_std", s.noise_std.to_string()),
            ("dim", self.kge.dim.to_string()),
            ("checkpoint_every", self.kge.checkpoint_every.to_string()),
            ("normalize_entities", self.kge.normalize_entities.to_string()),
            ("kge_epochs", self.kge.epochs.to_string()),
            ("kge_batch_size", self.kge.batch_size.to_string()),
            ("kge_learning_rate", self.kge.learning_rate.to_string()),
            ("kge_margin", self.kge.margin.to_string()),
            ("kge_neg_ratio", self.kge.neg_ratio.to_string()),
            ("kqgc_epochs", self.kqgc.epochs.to_string()),
            ("kqgc_batch_size", self.kqgc.batch_size.to_string()),
            ("kqgc_learning_rate", self.kqgc.learning_rate.to_string()),
            ("kqgc_margin", self.kqgc.margin.to_string()),
            ("kqgc_neg_ratio", self.kqgc.neg_ratio.to_string()),
            ("fan_out", self.kqgc.fan_out.to_string()),
            ("clf_l2", self.classifier.l2.to_string()),
            ("clf_iterations", self.classifier.iterations.to_string()),
            ("clf_learning_rate", self.classifier.learning_rate.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}
