//! Run configuration as a flat, documented key set.
//!
//! Config files hold one `key = value` per line; `#` starts a comment.
//! A flat JSON object with the same keys (as written to
//! `config_effective.json`) is accepted too.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intervention::{CngConfig, PerturbConfig, SamplingStrategy};
use crate::model::{EimVariant, ForwardOptions, LossWeights};
use crate::tensor::AdamConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: unknown config key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("key `{key}`: bad value `{value}`: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("line {line}: expected `key = value`, found `{text}`")]
    Syntax { line: usize, text: String },
}

/// Components that an ablation run removes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ablation {
    pub cng: bool,
    pub eim: bool,
    pub group: bool,
}

impl Ablation {
    pub const NONE: Self = Self {
        cng: false,
        eim: false,
        group: false,
    };

    pub fn is_none(&self) -> bool {
        *self == Self::NONE
    }

    /// Name as used on the command line, `full` for no ablation.
    pub fn variant_name(&self) -> String {
        if self.is_none() {
            "full".to_string()
        } else {
            self.to_string().replace(',', "+")
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [(self.cng, "cng"), (self.eim, "eim"), (self.group, "group")]
            .into_iter()
            .filter_map(|(on, name)| on.then_some(name))
            .collect();
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join(","))
        }
    }
}

impl FromStr for Ablation {
    type Err = String;

    /// Accepts `none`, `full`, or components joined by `,` or `+`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut a = Self::NONE;
        let s = s.trim();
        if s.is_empty() || s == "none" || s == "full" {
            return Ok(a);
        }
        for part in s.split([',', '+']) {
            match part.trim() {
                "cng" => a.cng = true,
                "eim" => a.eim = true,
                "group" => a.group = true,
                other => return Err(format!("unknown component `{other}` (expected cng, eim, group)")),
            }
        }
        Ok(a)
    }
}

/// Cap on detected groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupHint {
    /// Twice the number of classes.
    Auto,
    /// A fixed cap; 0 leaves the detector uncapped.
    Fixed(usize),
}

impl GroupHint {
    pub fn resolve(&self, class_count: usize) -> usize {
        match self {
            Self::Auto => 2 * class_count,
            Self::Fixed(k) => *k,
        }
    }
}

impl fmt::Display for GroupHint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Auto => f.write_str("auto"),
            Self::Fixed(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for GroupHint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(Self::Auto);
        }
        s.parse().map(Self::Fixed).map_err(|_| "expected `auto` or a count".to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum F1Average {
    Macro,
    Micro,
}

impl fmt::Display for F1Average {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Macro => "macro",
            Self::Micro => "micro",
        })
    }
}

impl FromStr for F1Average {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "macro" => Ok(Self::Macro),
            "micro" => Ok(Self::Micro),
            _ => Err("expected `macro` or `micro`".into()),
        }
    }
}

/// Quantity watched by early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopMetric {
    /// Validation F1 (averaged per `f1_average`); higher is better.
    F1,
    /// Validation cross-entropy; lower is better.
    Loss,
}

impl fmt::Display for StopMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::F1 => "f1",
            Self::Loss => "loss",
        })
    }
}

impl FromStr for StopMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f1" => Ok(Self::F1),
            "loss" => Ok(Self::Loss),
            _ => Err("expected `f1` or `loss`".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub folds: usize,
    pub val_fraction: f64,
    pub early_stop_patience: usize,
    pub early_stop_metric: StopMetric,
    pub f1_average: F1Average,
    pub hidden: usize,
    pub dropout: f64,
    pub eim_variant: EimVariant,
    pub cng: CngConfig,
    pub perturb: PerturbConfig,
    pub feature_noise_sigma: f64,
    pub group_count_hint: GroupHint,
    pub loss_weights: LossWeights,
    pub ablation: Ablation,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 20,
            lr: 1e-3,
            folds: 5,
            val_fraction: 0.1,
            early_stop_patience: 5,
            early_stop_metric: StopMetric::F1,
            f1_average: F1Average::Macro,
            hidden: 64,
            dropout: 0.1,
            eim_variant: EimVariant::InnerProduct,
            cng: CngConfig::default(),
            perturb: PerturbConfig::default(),
            feature_noise_sigma: 0.1,
            group_count_hint: GroupHint::Auto,
            loss_weights: LossWeights::default(),
            ablation: Ablation::NONE,
            threads: 1,
        }
    }
}

/// One documented configuration key.
#[derive(Debug, Clone, Copy)]
pub struct KeyDoc {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

/// Every key with its documented default.
///
/// The documented defaults are the ones the code applies:
///
/// ```
/// use cnl_core::train::{RunConfig, CONFIG_KEYS};
/// let cfg = RunConfig::default();
/// for key in CONFIG_KEYS {
///     assert_eq!(cfg.get(key.name).unwrap(), key.default, "key {}", key.name);
/// }
/// assert_eq!(CONFIG_KEYS.len(), cfg.to_map().len());
/// ```
pub const CONFIG_KEYS: &[KeyDoc] = &[
    KeyDoc { name: "seed", default: "0", help: "root seed for every random stream" },
    KeyDoc { name: "epochs", default: "20", help: "training epochs (one full-batch update each)" },
    KeyDoc { name: "lr", default: "0.001", help: "Adam learning rate" },
    KeyDoc { name: "folds", default: "5", help: "cross-validation folds" },
    KeyDoc { name: "val_fraction", default: "0.1", help: "share of each training fold held out for early stopping" },
    KeyDoc { name: "early_stop_patience", default: "5", help: "epochs without validation improvement before stopping; 0 disables" },
    KeyDoc { name: "early_stop_metric", default: "f1", help: "early stopping monitor: f1 or loss" },
    KeyDoc { name: "f1_average", default: "macro", help: "F1 averaging for reports and early stopping: macro or micro" },
    KeyDoc { name: "hidden", default: "64", help: "hidden width" },
    KeyDoc { name: "dropout", default: "0.1", help: "encoder feature dropout during training" },
    KeyDoc { name: "eim_variant", default: "inner_product", help: "edge logit form: inner_product or elementwise" },
    KeyDoc { name: "cng_strategy", default: "dissimilar", help: "counterfactual neighbour sampling: random, similar or dissimilar" },
    KeyDoc { name: "cng_k", default: "5", help: "counterfactual neighbours per node" },
    KeyDoc { name: "cng_pool", default: "15", help: "candidate pool size for similar/dissimilar sampling" },
    KeyDoc { name: "inter_group_drop_prob", default: "0.3", help: "drop probability of each inter-group node pair" },
    KeyDoc { name: "mask_drop_rate", default: "0.1", help: "fraction of lowest-importance edges masked (tau)" },
    KeyDoc { name: "edge_noise_sigma", default: "0.1", help: "std of Gaussian edge-weight noise" },
    KeyDoc { name: "feature_noise_sigma", default: "0.1", help: "std of Gaussian input-feature noise" },
    KeyDoc { name: "group_count_hint", default: "auto", help: "maximum detected groups; auto = 2 x classes, 0 = uncapped" },
    KeyDoc { name: "lambda_ctr", default: "0.5", help: "contrastive loss weight" },
    KeyDoc { name: "lambda_orth", default: "0.1", help: "orthogonality loss weight" },
    KeyDoc { name: "lambda_mi", default: "0.1", help: "mutual-information proxy weight" },
    KeyDoc { name: "ablate", default: "none", help: "components to remove: none or any of cng,eim,group" },
    KeyDoc { name: "threads", default: "1", help: "worker threads for fold-level parallelism" },
];

/// Help text listing every key and its default.
pub fn config_help() -> String {
    let width = CONFIG_KEYS.iter().map(|k| k.name.len()).max().unwrap_or(0);
    let mut s = String::from("Configuration keys (default in brackets):\n");
    for k in CONFIG_KEYS {
        s.push_str(&format!("  {:width$}  [{}] {}\n", k.name, k.default, k.help));
    }
    s
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

impl RunConfig {
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "seed" => self.seed.to_string(),
            "epochs" => self.epochs.to_string(),
            "lr" => self.lr.to_string(),
            "folds" => self.folds.to_string(),
            "val_fraction" => self.val_fraction.to_string(),
            "early_stop_patience" => self.early_stop_patience.to_string(),
            "early_stop_metric" => self.early_stop_metric.to_string(),
            "f1_average" => self.f1_average.to_string(),
            "hidden" => self.hidden.to_string(),
            "dropout" => self.dropout.to_string(),
            "eim_variant" => self.eim_variant.to_string(),
            "cng_strategy" => self.cng.strategy.to_string(),
            "cng_k" => self.cng.k.to_string(),
            "cng_pool" => self.cng.candidate_pool.to_string(),
            "inter_group_drop_prob" => self.perturb.inter_group_drop_prob.to_string(),
            "mask_drop_rate" => self.perturb.mask_drop_rate.to_string(),
            "edge_noise_sigma" => self.perturb.edge_noise_sigma.to_string(),
            "feature_noise_sigma" => self.feature_noise_sigma.to_string(),
            "group_count_hint" => self.group_count_hint.to_string(),
            "lambda_ctr" => self.loss_weights.contrastive.to_string(),
            "lambda_orth" => self.loss_weights.orthogonality.to_string(),
            "lambda_mi" => self.loss_weights.mutual_info.to_string(),
            "ablate" => self.ablation.to_string(),
            "threads" => self.threads.to_string(),
            _ => return None,
        })
    }

    /// Set one key from its text form. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "folds" => self.folds = parse(key, v)?,
            "val_fraction" => self.val_fraction = parse(key, v)?,
            "early_stop_patience" => self.early_stop_patience = parse(key, v)?,
            "early_stop_metric" => self.early_stop_metric = parse(key, v)?,
            "f1_average" => self.f1_average = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "eim_variant" => self.eim_variant = parse(key, v)?,
            "cng_strategy" => self.cng.strategy = parse::<SamplingStrategy>(key, v)?,
            "cng_k" => self.cng.k = parse(key, v)?,
            "cng_pool" => self.cng.candidate_pool = parse(key, v)?,
            "inter_group_drop_prob" => self.perturb.inter_group_drop_prob = parse(key, v)?,
            "mask_drop_rate" => self.perturb.mask_drop_rate = parse(key, v)?,
            "edge_noise_sigma" => self.perturb.edge_noise_sigma = parse(key, v)?,
            "feature_noise_sigma" => self.feature_noise_sigma = parse(key, v)?,
            "group_count_hint" => self.group_count_hint = parse(key, v)?,
            "lambda_ctr" => self.loss_weights.contrastive = parse(key, v)?,
            "lambda_orth" => self.loss_weights.orthogonality = parse(key, v)?,
            "lambda_mi" => self.loss_weights.mutual_info = parse(key, v)?,
            "ablate" => self.ablation = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                    line: 0,
                })
            }
        }
        Ok(())
    }

    /// Apply a `key = value` text, line by line.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                text: raw.to_string(),
            })?;
            self.set(k.trim(), v).map_err(|e| match e {
                ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { key, line },
                other => other,
            })?;
        }
        Ok(())
    }

    /// Apply a flat JSON object of keys to string, number or boolean values.
    pub fn apply_json(&mut self, text: &str) -> Result<(), ConfigError> {
        let map: BTreeMap<String, serde_json::Value> =
            serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
                line: e.line(),
                text: e.to_string(),
            })?;
        for (k, v) in map {
            let s = match v {
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            };
            self.set(&k, &s)?;
        }
        Ok(())
    }

    /// Apply a config file body, choosing JSON when it starts with `{`.
    pub fn apply_file_text(&mut self, text: &str) -> Result<(), ConfigError> {
        if text.trim_start().starts_with('{') {
            self.apply_json(text)
        } else {
            self.apply_text(text)
        }
    }

    /// Every key in documentation order with its current value.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        CONFIG_KEYS
            .iter()
            .map(|k| (k.name.to_string(), self.get(k.name).expect("documented key")))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_map()).expect("string map serialises") + "\n"
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, reason: &str| {
            Err(ConfigError::BadValue {
                key: key.to_string(),
                value: self.get(key).unwrap_or_default(),
                reason: reason.to_string(),
            })
        };
        if self.epochs == 0 {
            return bad("epochs", "must be >= 1");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr", "must be > 0");
        }
        if self.folds < 2 {
            return bad("folds", "must be >= 2");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction", "must be in [0, 1)");
        }
        if self.hidden == 0 {
            return bad("hidden", "must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", "must be in [0, 1)");
        }
        if self.cng.candidate_pool < self.cng.k {
            return bad("cng_pool", "must be >= cng_k");
        }
        if let Err(e) = self.perturb.validate() {
            let key = if !(0.0..=1.0).contains(&self.perturb.inter_group_drop_prob) {
                "inter_group_drop_prob"
            } else if !(0.0..1.0).contains(&self.perturb.mask_drop_rate) {
                "mask_drop_rate"
            } else {
                "edge_noise_sigma"
            };
            return bad(key, &e.to_string());
        }
        if !(self.feature_noise_sigma >= 0.0) || !self.feature_noise_sigma.is_finite() {
            return bad("feature_noise_sigma", "must be finite and >= 0");
        }
        for (key, w) in [
            ("lambda_ctr", self.loss_weights.contrastive),
            ("lambda_orth", self.loss_weights.orthogonality),
            ("lambda_mi", self.loss_weights.mutual_info),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return bad(key, "must be finite and >= 0");
            }
        }
        if self.threads == 0 {
            return bad("threads", "must be >= 1");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    /// Forward options for training (`train = true`) or evaluation.
    pub fn forward_options(&self, train: bool) -> ForwardOptions {
        ForwardOptions {
            train,
            dropout: self.dropout,
            use_eim: !self.ablation.eim,
            eim_variant: self.eim_variant,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_and_comments() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nepochs = 3 # trailing\n\nlr=0.01\nablate = eim+group\n")
            .unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.lr, 0.01);
        assert!(c.ablation.eim && c.ablation.group && !c.ablation.cng);
        let mut d = RunConfig::default();
        d.apply_json(&c.to_json()).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn unknown_key_reports_line() {
        let mut c = RunConfig::default();
        assert_eq!(
            c.apply_text("epochs = 2\nepoch = 3\n"),
            Err(ConfigError::UnknownKey {
                key: "epoch".into(),
                line: 2
            })
        );
    }

    #[test]
    fn validation() {
        let mut c = RunConfig::default();
        c.folds = 1;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.perturb.mask_drop_rate = 1.0;
        assert!(matches!(c.validate(), Err(ConfigError::BadValue { key, .. }) if key == "mask_drop_rate"));
        assert!(RunConfig::default().validate().is_ok());
    }

    #[test]
    fn ablation_names() {
        let a: Ablation = "eim+group".parse().unwrap();
        assert_eq!(a.variant_name(), "eim+group");
        assert_eq!(Ablation::NONE.variant_name(), "full");
        assert!("foo".parse::<Ablation>().is_err());
    }
}
