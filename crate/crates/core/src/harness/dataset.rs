use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Labels used by the financial-sentiment data files.
pub const NEUTRAL: usize = 0;
pub const POSITIVE: usize = 1;
pub const NEGATIVE: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledText {
    pub text: String,
    pub label: usize,
}

impl LabeledText {
    pub fn new(label: usize, text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            label,
        }
    }
}

/// Parses `label<TAB>text` lines. `path` is only used in error messages.
pub fn parse_dataset(contents: &str, path: &Path, classes: usize) -> Result<Vec<LabeledText>> {
    let mut out = Vec::new();
    for (i, line) in contents.lines().enumerate() {
        let lineno = i + 1;
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg,
        };
        let (label, text) = line
            .split_once('\t')
            .ok_or_else(|| err("expected label<TAB>text".into()))?;
        let label: usize = label
            .parse()
            .map_err(|_| err(format!("label {label:?} is not a non-negative integer")))?;
        if label >= classes {
            return Err(err(format!("label {label} out of range for {classes} classes")));
        }
        out.push(LabeledText::new(label, text));
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>, classes: usize) -> Result<Vec<LabeledText>> {
    let path = path.as_ref();
    let contents = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&contents, path, classes)
}

pub fn format_dataset(records: &[LabeledText]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&r.label.to_string());
        s.push('\t');
        s.push_str(&r.text);
        s.push('\n');
    }
    s
}

pub fn save_dataset(path: impl AsRef<Path>, records: &[LabeledText]) -> Result<()> {
    let path = path.as_ref();
    if let Some(bad) = records.iter().find(|r| r.text.contains('\n')) {
        return Err(Error::InvalidInput(format!("text contains a newline: {:?}", bad.text)));
    }
    fs::write(path, format_dataset(records)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<LabeledText>,
    pub validation: Vec<LabeledText>,
    pub test: Vec<LabeledText>,
}

/// Seeded shuffle, then 60/20/20.
pub fn split_dataset(records: &[LabeledText], seed: u64) -> Split {
    let mut shuffled = records.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = shuffled.len();
    let n_train = n * 6 / 10;
    let n_val = n * 2 / 10;
    let test = shuffled.split_off(n_train + n_val);
    let validation = shuffled.split_off(n_train);
    Split {
        train: shuffled,
        validation,
        test,
    }
}

/// Shape of a synthetic keyword task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSpec {
    pub keywords_per_class: usize,
    pub noise_words: usize,
    /// Noise tokens per text, inclusive range.
    pub min_noise: usize,
    pub max_noise: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            keywords_per_class: 2,
            noise_words: 40,
            min_noise: 3,
            max_noise: 8,
        }
    }
}

impl SynthSpec {
    pub fn keyword(class: usize, j: usize) -> String {
        format!("key{class}v{j}")
    }

    pub fn noise_word(j: usize) -> String {
        format!("noise{j}")
    }

    fn validate(&self) -> Result<()> {
        if self.keywords_per_class == 0 || self.noise_words == 0 {
            return Err(Error::Config("synthetic spec needs keywords and noise words".into()));
        }
        if self.min_noise > self.max_noise {
            return Err(Error::Config("min_noise exceeds max_noise".into()));
        }
        Ok(())
    }
}

/// Balanced synthetic data: each text has exactly one keyword belonging to
/// its class, placed at a random position among noise tokens.
pub fn synth_dataset(seed: u64, n: usize, classes: usize, spec: &SynthSpec) -> Result<Vec<LabeledText>> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be at least 1".into()));
    }
    if classes < 2 {
        return Err(Error::Config("need at least two classes".into()));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let out = labels
        .into_iter()
        .map(|label| {
            let len = rng.random_range(spec.min_noise..=spec.max_noise);
            let mut words: Vec<String> = (0..len)
                .map(|_| SynthSpec::noise_word(rng.random_range(0..spec.noise_words)))
                .collect();
            let kw = SynthSpec::keyword(label, rng.random_range(0..spec.keywords_per_class));
            words.insert(rng.random_range(0..=len), kw);
            LabeledText::new(label, words.join(" "))
        })
        .collect();
    Ok(out)
}

/// The class whose keyword appears in `text`, if any.
pub fn keyword_class(text: &str, classes: usize, spec: &SynthSpec) -> Option<usize> {
    text.split_whitespace().find_map(|w| {
        (0..classes).find(|&c| (0..spec.keywords_per_class).any(|j| SynthSpec::keyword(c, j) == w))
    })
}
