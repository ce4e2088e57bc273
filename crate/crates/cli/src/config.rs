use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hmt_core::data::SyntheticTaskSpec;
use hmt_core::train::TrainConfig;
use hmt_core::{Error, HmtConfig};

use crate::error::{io_at, CliError, CliResult};

/// Training data: a parallel file pair or a synthetic task.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// One source sentence per line, whitespace tokenized.
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub synthetic: Option<SyntheticTaskSpec>,
    /// Pairs drawn when `synthetic` is set.
    pub synthetic_pairs: usize,
    /// Tokens seen fewer times map to `<unk>`.
    pub min_frequency: usize,
}

/// Everything `hmt train` reads. Relative data paths resolve against the
/// config file's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: HmtConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    /// Save a numbered checkpoint every this many updates; `0` saves only the final one.
    pub checkpoint_every: usize,
}

impl DataConfig {
    fn normalized(mut self) -> Self {
        if self.synthetic_pairs == 0 {
            self.synthetic_pairs = 2000;
        }
        self.min_frequency = self.min_frequency.max(1);
        self
    }
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.train.validate()?;
        let d = &self.data;
        match (&d.source, &d.target, &d.synthetic) {
            (Some(_), Some(_), None) => Ok(()),
            (None, None, Some(spec)) => spec.validate().map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("data.synthetic.{m}")).into(),
                other => other.into(),
            }),
            _ => Err(Error::Config("data: set both source and target, or synthetic".into()).into()),
        }
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let c: RunConfig = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            CliError::new("config", format!("invalid config field {}", field_hint(&msg)))
        })?;
        Ok(Self {
            data: c.data.clone().normalized(),
            ..c
        })
    }

    /// Reads, resolves relative paths and validates.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = io_at(path, std::fs::read_to_string(path))?;
        let mut c = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut c.data.source, &mut c.data.target].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        c.validate()?;
        Ok(c)
    }
}

/// serde reports unknown keys as "unknown field `x`, expected ..."; keep
/// the field name in front.
fn field_hint(msg: &str) -> String {
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        if let Some((name, tail)) = rest.split_once('`') {
            return format!("{name}: unknown key{}", tail.split(',').next().unwrap_or(""));
        }
    }
    msg.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_model_and_optimizer() {
        let c = RunConfig::from_json(r#"{"data": {"synthetic": {"kind": "copy", "vocab_size": 5, "min_len": 2, "max_len": 4, "lag": 0, "seed": 1}}}"#).unwrap();
        c.validate().unwrap();
        assert_eq!((c.train.beta1, c.train.beta2), (0.9, 0.98));
        assert_eq!(c.train.warmup_updates, 4000);
        assert_eq!(c.model.label_smoothing, 0.1);
        assert_eq!(c.model.dropout, 0.3);
        assert_eq!(
            (c.model.layers, c.model.model_dim, c.model.heads, c.model.ffn_dim),
            (2, 64, 2, 128)
        );
        assert_eq!((c.model.states, c.model.lower), (4, 2));
        assert_eq!(c.data.synthetic_pairs, 2000);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::from_json(r#"{"train": {"learning_rate": 1}}"#).unwrap_err();
        assert_eq!(err.code, "config");
        assert!(err.message.contains("learning_rate"), "{}", err.message);
    }

    #[test]
    fn invalid_values_are_named() {
        let c = RunConfig::from_json(r#"{"train": {"lr": -1}, "data": {"source": "a", "target": "b"}}"#).unwrap();
        let err = c.validate().unwrap_err();
        assert!(err.message.contains("lr"), "{}", err.message);
        let c = RunConfig::from_json(r#"{"data": {"source": "a"}}"#).unwrap();
        assert!(c.validate().unwrap_err().message.contains("data"));
    }
}
