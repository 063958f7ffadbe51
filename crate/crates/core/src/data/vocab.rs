use std::collections::HashMap;
use std::path::Path;

use super::mind::Catalog;
use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";

/// Token ↔ id map. Id 0 is reserved for padding and out-of-vocabulary tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Ids assigned by descending frequency, ties broken lexicographically.
    pub fn from_counts(counts: HashMap<String, usize>) -> Self {
        let mut items: Vec<(String, usize)> = counts.into_iter().collect();
        items.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = std::iter::once(PAD.to_string())
            .chain(items.into_iter().map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }

    /// Counts every token yielded by `items`.
    pub fn build<'a>(items: impl IntoIterator<Item = &'a str>) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for t in items {
            *counts.entry(t.to_string()).or_default() += 1;
        }
        Self::from_counts(counts)
    }

    /// Number of ids including the reserved 0.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.first().map(String::as_str) != Some(PAD) {
            return Err(Error::format(path, "vocabulary must start with <pad>"));
        }
        Ok(Self::from_tokens(tokens))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabs {
    pub words: Vocab,
    pub entities: Vocab,
    pub topics: Vocab,
}

impl Vocabs {
    pub fn sizes(&self) -> VocabSizes {
        VocabSizes {
            words: self.words.len(),
            entities: self.entities.len(),
            topics: self.topics.len(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        self.words.write(&dir.join("words.txt"))?;
        self.entities.write(&dir.join("entities.txt"))?;
        self.topics.write(&dir.join("topics.txt"))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(Self {
            words: Vocab::read(&dir.join("words.txt"))?,
            entities: Vocab::read(&dir.join("entities.txt"))?,
            topics: Vocab::read(&dir.join("topics.txt"))?,
        })
    }
}

/// Embedding table row counts, including the reserved id 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocabSizes {
    pub words: usize,
    pub entities: usize,
    pub topics: usize,
}

pub fn build_vocabs(catalog: &Catalog) -> Result<Vocabs> {
    if catalog.is_empty() {
        return Err(Error::Contract("cannot build vocabularies from an empty catalog".into()));
    }
    let arts = catalog.articles();
    let tokens: Vec<Vec<String>> = arts.iter().map(|a| a.title_tokens()).collect();
    Ok(Vocabs {
        words: Vocab::build(tokens.iter().flatten().map(String::as_str)),
        entities: Vocab::build(arts.iter().flat_map(|a| a.entities.iter().map(String::as_str))),
        topics: Vocab::build(arts.iter().map(|a| a.topic.as_str())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::mind::NewsArticle;

    fn art(id: &str, title: &str, topic: &str) -> NewsArticle {
        NewsArticle {
            news_id: id.into(),
            topic: topic.into(),
            title: title.into(),
            entities: vec![],
        }
    }

    #[test]
    fn shared_tokens_get_one_entry_and_order_is_frequency_then_lexical() {
        let mut c = Catalog::new();
        c.insert(art("a", "Trade deal", "biz"));
        c.insert(art("b", "trade war", "biz"));
        let v = build_vocabs(&c).unwrap();
        assert_eq!(v.words.len(), 4);
        assert_eq!(v.words.token(1), Some("trade"));
        assert_eq!(v.words.token(2), Some("deal"));
        assert_eq!(v.words.token(3), Some("war"));
        assert_eq!(v.words.id("unseen"), 0);
        assert_eq!(v.topics.id("biz"), 1);
    }

    #[test]
    fn vocab_files_round_trip_deterministically() {
        let mut c = Catalog::new();
        c.insert(art("a", "z y x", "t"));
        c.insert(art("b", "x w", "u"));
        let v1 = build_vocabs(&c).unwrap();
        let v2 = build_vocabs(&c).unwrap();
        assert_eq!(v1.words.to_text(), v2.words.to_text());
        let dir = tempfile::tempdir().unwrap();
        v1.write(dir.path()).unwrap();
        assert_eq!(Vocabs::read(dir.path()).unwrap(), v1);
    }

    #[test]
    fn empty_catalog_is_rejected() {
        assert!(build_vocabs(&Catalog::new()).is_err());
    }
}
