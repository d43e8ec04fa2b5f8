//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored; everything after the
//! first `=` is the value, trimmed. Keys may appear once. Lists are
//! comma-separated.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::inference::{LrPolicy, TrainConfig};
use crate::model::VariantConfig;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: origin.to_path_buf(),
                line: n + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse_err("expected key = value".into()))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(parse_err("empty key".into()));
            }
            if entries
                .insert(k.to_string(), v.trim().to_string())
                .is_some()
            {
                return Err(parse_err(format!("duplicate key {k:?}")));
            }
        }
        Ok(KeyValues { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    /// Sets or replaces `key`, for command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::InvalidArgument(format!("{key} = {v:?}: {e}")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<T>()
                            .map_err(|e| Error::InvalidArgument(format!("{key}: {s:?}: {e}")))
                    })
                    .collect()
            })
            .transpose()
    }

    /// Fails on the first key not in `allowed`, which catches typos.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        match self.entries.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::InvalidArgument(format!(
                "unknown configuration key {k:?} (known: {})",
                allowed.join(", ")
            ))),
            None => Ok(()),
        }
    }
}

/// Keys understood by [`train_config`].
pub const TRAIN_KEYS: &[&str] = &[
    "factors",
    "learning_rate",
    "momentum",
    "passes",
    "epochs_per_pass",
    "seed",
    "sampling_seed",
    "init_std",
    "lr_policy",
    "lambda",
    "lambda_rel",
    "lambda_rev",
    "social_weights",
    "trust_values",
];

/// Builds a training configuration on top of the defaults. The variant's
/// switches default to the full model; set `social_weights = false` and
/// `trust_values = false` to reach the baselines.
pub fn train_config(kv: &KeyValues) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let dv = d.variant;
    let cfg = TrainConfig {
        n_factors: kv.get_or("factors", d.n_factors)?,
        learning_rate: kv.get_or("learning_rate", d.learning_rate)?,
        momentum: kv.get_or("momentum", d.momentum)?,
        passes: kv.get_or("passes", d.passes)?,
        epochs_per_pass: kv.get_or("epochs_per_pass", d.epochs_per_pass)?,
        seed: kv.get_or("seed", d.seed)?,
        sampling_seed: kv.get("sampling_seed")?,
        init_std: kv.get_or("init_std", d.init_std)?,
        lr_policy: kv.get_or::<LrPolicy>("lr_policy", d.lr_policy)?,
        variant: VariantConfig {
            lambda: kv.get_or("lambda", dv.lambda)?,
            lambda_rel: kv.get_or("lambda_rel", dv.lambda_rel)?,
            lambda_rev: kv.get_or("lambda_rev", dv.lambda_rev)?,
            use_social_weights: kv.get_or("social_weights", dv.use_social_weights)?,
            use_trust_values: kv.get_or("trust_values", dv.use_trust_values)?,
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Inverse of [`train_config`], used to record provenance.
pub fn train_config_entries(cfg: &TrainConfig) -> Vec<(&'static str, String)> {
    let v = &cfg.variant;
    let mut out = vec![
        ("factors", cfg.n_factors.to_string()),
        ("learning_rate", cfg.learning_rate.to_string()),
        ("momentum", cfg.momentum.to_string()),
        ("passes", cfg.passes.to_string()),
        ("epochs_per_pass", cfg.epochs_per_pass.to_string()),
        ("seed", cfg.seed.to_string()),
        ("init_std", cfg.init_std.to_string()),
        ("lr_policy", cfg.lr_policy.to_string()),
        ("lambda", v.lambda.to_string()),
        ("lambda_rel", v.lambda_rel.to_string()),
        ("lambda_rev", v.lambda_rev.to_string()),
        ("social_weights", v.use_social_weights.to_string()),
        ("trust_values", v.use_trust_values.to_string()),
    ];
    if let Some(s) = cfg.sampling_seed {
        out.push(("sampling_seed", s.to_string()));
    }
    out
}
