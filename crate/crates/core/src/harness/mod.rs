//! Data handling, experiments and the command-line front end.

pub mod attention;
pub mod cli;
pub mod dataset;
pub mod preprocess;
pub mod runconfig;
pub mod sweep;
pub mod vocab;

pub use attention::{export_attention_trace, write_attention_csv};
pub use dataset::{load_dataset, save_dataset, split_dataset, synth_dataset, LabeledText, Split, SynthSpec};
pub use preprocess::{preprocess, Preprocessor};
pub use runconfig::RunConfig;
pub use sweep::{default_grid, sweep_delta, SweepResult, SweepRow};
pub use vocab::Vocabulary;

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, WeightFile};
use crate::training::{checkpoint_file, Adam, Example};

/// A trained model together with what is needed to feed it raw text.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab: Vocabulary,
    /// `None` when training data was used as-is.
    pub preprocessor: Option<Preprocessor>,
}

const PREPROCESS_KEY: &str = "preprocess";
const STOPWORDS_KEY: &str = "preprocess.stopwords";
const FILTERED_KEY: &str = "preprocess.filtered";

fn join_sorted<'a>(words: impl IntoIterator<Item = &'a String>) -> String {
    let mut v: Vec<&str> = words.into_iter().map(String::as_str).collect();
    v.sort_unstable();
    v.join(" ")
}

impl Checkpoint {
    pub fn to_weight_file(&self, optimizer: Option<&Adam>) -> WeightFile {
        let mut file = match optimizer {
            Some(opt) => checkpoint_file(&self.model, opt),
            None => self.model.to_weight_file(),
        };
        file.set_meta(vocab::VOCAB_META_KEY, self.vocab.to_meta());
        match &self.preprocessor {
            Some(p) => {
                file.set_meta(PREPROCESS_KEY, "true");
                file.set_meta(STOPWORDS_KEY, join_sorted(p.stopwords()));
                file.set_meta(FILTERED_KEY, join_sorted(p.filtered()));
            }
            None => file.set_meta(PREPROCESS_KEY, "false"),
        }
        file
    }

    pub fn from_weight_file(file: &WeightFile) -> Result<Self> {
        let model = Model::from_weight_file(file)?;
        let vocab = Vocabulary::from_meta(
            file.meta(vocab::VOCAB_META_KEY)
                .ok_or_else(|| Error::WeightFile("checkpoint has no vocabulary".into()))?,
        )?;
        if vocab.len() != model.config().vocab {
            return Err(Error::WeightFile(format!(
                "vocabulary has {} entries but the model expects {}",
                vocab.len(),
                model.config().vocab
            )));
        }
        let preprocessor = match file.meta(PREPROCESS_KEY) {
            Some("true") => {
                let list = |k| file.meta(k).unwrap_or("").split_whitespace().collect::<Vec<_>>();
                Some(Preprocessor::new(list(STOPWORDS_KEY), list(FILTERED_KEY)))
            }
            _ => None,
        };
        Ok(Self {
            model,
            vocab,
            preprocessor,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>, optimizer: Option<&Adam>) -> Result<()> {
        self.to_weight_file(optimizer).write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_weight_file(&WeightFile::read(path)?)
    }

    pub fn clean(&self, text: &str) -> String {
        match &self.preprocessor {
            Some(p) => p.apply(text),
            None => text.to_string(),
        }
    }

    /// Cleans and tokenizes records; texts empty after cleaning are dropped
    /// and counted.
    pub fn examples(&self, records: &[LabeledText]) -> (Vec<Example>, usize) {
        encode_records(records, &self.vocab, self.preprocessor.as_ref(), self.model.config().max_seq_len)
    }
}

pub fn encode_records(
    records: &[LabeledText],
    vocab: &Vocabulary,
    preprocessor: Option<&Preprocessor>,
    max_len: usize,
) -> (Vec<Example>, usize) {
    let mut dropped = 0;
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let text = match preprocessor {
            Some(p) => p.apply(&r.text),
            None => r.text.clone(),
        };
        if text.trim().is_empty() {
            dropped += 1;
            continue;
        }
        out.push(Example {
            tokens: vocab.encode(&text, max_len),
            label: r.label,
        });
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} record(s) with no text left after preprocessing");
    }
    (out, dropped)
}
