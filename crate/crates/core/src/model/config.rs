use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Number of encoder iterations `d`.
    pub depth: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub vocab: usize,
    /// Maximum sequence length including the leading `[CLS]`.
    pub max_seq_len: usize,
    pub classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 12,
            hidden: 64,
            heads: 4,
            ffn: 256,
            vocab: 512,
            max_seq_len: 32,
            classes: 3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.depth < 2 {
            return fail(format!("depth must be at least 2, got {}", self.depth));
        }
        if self.heads == 0 || self.hidden == 0 || !self.hidden.is_multiple_of(self.heads) {
            return fail(format!(
                "hidden ({}) must be a positive multiple of heads ({})",
                self.hidden, self.heads
            ));
        }
        if self.classes < 2 {
            return fail(format!("classes must be at least 2, got {}", self.classes));
        }
        if self.max_seq_len < 2 {
            return fail(format!("max_seq_len must be at least 2, got {}", self.max_seq_len));
        }
        if self.ffn == 0 {
            return fail("ffn must be positive".into());
        }
        if self.vocab <= super::FIRST_WORD_ID {
            return fail(format!(
                "vocab must exceed the {} reserved ids, got {}",
                super::FIRST_WORD_ID,
                self.vocab
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Key-value pairs as stored in weight-file headers.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        [
            ("depth", self.depth),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("ffn", self.ffn),
            ("vocab", self.vocab),
            ("max_seq_len", self.max_seq_len),
            ("classes", self.classes),
        ]
        .into_iter()
        .map(|(k, v)| (format!("config.{k}"), v.to_string()))
        .collect()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let mut seen = 0;
        for (k, v) in pairs {
            let Some(field) = k.strip_prefix("config.") else { continue };
            let n: usize = v
                .parse()
                .map_err(|_| Error::WeightFile(format!("{k} = {v:?} is not a count")))?;
            match field {
                "depth" => cfg.depth = n,
                "hidden" => cfg.hidden = n,
                "heads" => cfg.heads = n,
                "ffn" => cfg.ffn = n,
                "vocab" => cfg.vocab = n,
                "max_seq_len" => cfg.max_seq_len = n,
                "classes" => cfg.classes = n,
                _ => return Err(Error::WeightFile(format!("unknown config key {k}"))),
            }
            seen += 1;
        }
        if seen != 7 {
            return Err(Error::WeightFile(format!("expected 7 config keys, found {seen}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_shapes() {
        let base = ModelConfig::default();
        for bad in [
            ModelConfig { depth: 1, ..base },
            ModelConfig { heads: 3, ..base },
            ModelConfig { classes: 1, ..base },
            ModelConfig { max_seq_len: 1, ..base },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn pairs_round_trip() {
        let cfg = ModelConfig { depth: 6, hidden: 32, ..Default::default() };
        let pairs = cfg.to_pairs();
        let back = ModelConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())));
        assert_eq!(back.unwrap(), cfg);
    }
}
