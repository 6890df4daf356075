use std::collections::HashSet;

use regex::Regex;

/// English function words removed by default.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "been", "but", "by", "for", "from", "has", "have", "in", "into",
    "is", "it", "its", "of", "on", "or", "that", "the", "their", "this", "to", "was", "were", "will", "with",
];

/// Text cleaning: lowercase, drop URL tokens, strip symbols, drop stopwords
/// and filtered keywords, collapse whitespace.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    stopwords: HashSet<String>,
    /// Tokens marking non-financial content (source tags, boilerplate).
    filtered: HashSet<String>,
    url: Regex,
}

impl Default for Preprocessor {
    fn default() -> Self {
        Self::new(DEFAULT_STOPWORDS.iter().copied(), std::iter::empty::<&str>())
    }
}

impl Preprocessor {
    pub fn new<S: AsRef<str>>(stopwords: impl IntoIterator<Item = S>, filtered: impl IntoIterator<Item = S>) -> Self {
        let norm = |w: S| w.as_ref().trim().to_lowercase();
        Self {
            stopwords: stopwords.into_iter().map(norm).collect(),
            filtered: filtered.into_iter().map(norm).collect(),
            url: Regex::new(r"^(?:[a-z][a-z0-9+.-]*://|www\.)\S*$").expect("valid regex"),
        }
    }

    pub fn stopwords(&self) -> &HashSet<String> {
        &self.stopwords
    }

    pub fn filtered(&self) -> &HashSet<String> {
        &self.filtered
    }

    pub fn apply(&self, text: &str) -> String {
        let lower = text.to_lowercase();
        let mut out: Vec<String> = Vec::new();
        for raw in lower.split_whitespace() {
            if self.url.is_match(raw) {
                continue;
            }
            let token: String = raw.chars().filter(|c| c.is_alphanumeric()).collect();
            if token.is_empty() || self.stopwords.contains(&token) || self.filtered.contains(&token) {
                continue;
            }
            out.push(token);
        }
        out.join(" ")
    }
}

pub fn preprocess(text: &str) -> String {
    Preprocessor::default().apply(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_symbols() {
        assert_eq!(preprocess("Good news!!!"), "good news");
    }

    #[test]
    fn custom_stoplist() {
        let p = Preprocessor::new(["the", "of"], []);
        assert_eq!(p.apply("the market of the year"), "market year");
    }

    #[test]
    fn drops_urls() {
        assert_eq!(preprocess("see https://x.co now"), "see now");
        assert_eq!(preprocess("see www.example.com/a?b=1 now"), "see now");
    }

    #[test]
    fn filter_keywords_and_whitespace() {
        let p = Preprocessor::new(Vec::<&str>::new(), vec!["reuters"]);
        assert_eq!(p.apply("  (Reuters)\t shares   up "), "shares up");
        assert_eq!(p.apply("!!! ..."), "");
    }

    #[test]
    fn idempotent_on_examples() {
        for s in ["Q3 EPS beat: +12%!", "İstanbul BÖRSE rallies", "don't   sell -- now"] {
            let once = preprocess(s);
            assert_eq!(preprocess(&once), once);
        }
    }
}
