use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

/// Settings for the `train` command, read from a flat `key = value` file.
/// Blank lines and lines starting with `#` are ignored.
///
/// ```text
/// depth = 6
/// hidden = 32
/// learning_rate = 1e-3
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `vocab` is the upper bound on vocabulary size; the trained model uses
    /// the size actually built from the data.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub preprocess: bool,
    /// `None` keeps the default stopword list.
    pub stopwords: Option<Vec<String>>,
    pub filtered: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            preprocess: true,
            stopwords: None,
            filtered: Vec::new(),
        }
    }
}

fn words(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|w| !w.is_empty()).map(str::to_string).collect()
}

impl RunConfig {
    pub fn parse(contents: &str, path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, line) in contents.lines().enumerate() {
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected key = value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value).map_err(err)?;
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let contents = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&contents, path)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value.parse().map_err(|_| format!("bad value {value:?} for {key}"))
        }
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "depth" => m.depth = num(key, value)?,
            "hidden" => m.hidden = num(key, value)?,
            "heads" => m.heads = num(key, value)?,
            "ffn" => m.ffn = num(key, value)?,
            "vocab" => m.vocab = num(key, value)?,
            "max_seq_len" => m.max_seq_len = num(key, value)?,
            "classes" => m.classes = num(key, value)?,
            "learning_rate" => t.learning_rate = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "epochs" => t.epochs = num(key, value)?,
            "beta1" => t.beta1 = num(key, value)?,
            "beta2" => t.beta2 = num(key, value)?,
            "adam_eps" => t.adam_eps = num(key, value)?,
            "seed" => t.seed = num(key, value)?,
            "preprocess" => self.preprocess = num(key, value)?,
            "stopwords" => self.stopwords = Some(words(value)),
            "filtered" => self.filtered = words(value),
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }
}
