use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const DEFAULT_MAX_TOKENS: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub truncated: bool,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Whitespace word vocabulary. Id 0 is padding, id 1 the out-of-vocabulary bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
    pub max_tokens: usize,
}

impl Vocab {
    pub fn from_words<I, S>(words: I, max_tokens: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let unique: BTreeSet<String> = words
            .into_iter()
            .map(|w| w.as_ref().to_lowercase())
            .filter(|w| !w.is_empty() && w != PAD_TOKEN && w != UNK_TOKEN)
            .collect();
        let mut all = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        all.extend(unique);
        Self::from_list(all, max_tokens)
    }

    /// Vocabulary covering every word of the given texts.
    pub fn from_texts<'a, I: IntoIterator<Item = &'a str>>(texts: I, max_tokens: usize) -> Self {
        Self::from_words(texts.into_iter().flat_map(str::split_whitespace), max_tokens)
    }

    fn from_list(words: Vec<String>, max_tokens: usize) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Self {
            words,
            index,
            max_tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 2
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        let mut ids: Vec<u32> = text
            .split_whitespace()
            .map(|w| *self.index.get(&w.to_lowercase()).unwrap_or(&UNK_ID))
            .collect();
        let truncated = ids.len() > self.max_tokens;
        ids.truncate(self.max_tokens);
        TokenSequence { ids, truncated }
    }

    /// Newline-delimited UTF-8, one word per line, starting with `<pad>` and `<unk>`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.words.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, max_tokens: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, max_tokens).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn parse(text: &str, max_tokens: usize) -> std::result::Result<Self, String> {
        let words: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
        if words.len() < 2 || words[0] != PAD_TOKEN || words[1] != UNK_TOKEN {
            return Err(format!("vocabulary must start with {PAD_TOKEN} and {UNK_TOKEN}"));
        }
        let unique: BTreeSet<&String> = words.iter().collect();
        if unique.len() != words.len() {
            return Err("vocabulary has duplicate words".into());
        }
        Ok(Self::from_list(words, max_tokens))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::from_texts(["the touch of a seam is smooth"], DEFAULT_MAX_TOKENS)
    }

    #[test]
    fn repeated_words_share_ids() {
        let t = vocab().tokenize("smooth smooth");
        assert_eq!(t.ids.len(), 2);
        assert_eq!(t.ids[0], t.ids[1]);
        assert!(t.ids[0] > UNK_ID);
    }

    #[test]
    fn empty_and_unknown() {
        let v = vocab();
        assert!(v.tokenize("").is_empty());
        assert_eq!(v.tokenize("velvet").ids, vec![UNK_ID]);
    }

    #[test]
    fn truncation_is_flagged() {
        let v = vocab();
        let text = vec!["smooth"; 33].join(" ");
        let t = v.tokenize(&text);
        assert_eq!(t.len(), 32);
        assert!(t.truncated);
        assert!(!v.tokenize("smooth").truncated);
    }

    #[test]
    fn file_round_trip() {
        let v = vocab();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        assert_eq!(Vocab::load(&p, DEFAULT_MAX_TOKENS).unwrap(), v);
        std::fs::write(&p, "smooth\n").unwrap();
        assert!(matches!(Vocab::load(&p, 8), Err(Error::Parse { .. })));
    }
}
