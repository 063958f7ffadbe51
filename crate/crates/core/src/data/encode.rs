use std::path::Path;

use super::mind::{Catalog, Impression, NewsArticle};
use super::vocab::{Vocab, Vocabs};
use crate::autodiff::checkpoint::{read_container, write_container, Entry, Payload};
use crate::error::{Error, Result};

/// Fixed-length integer encoding of one article. Id 0 is padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedNews {
    pub title_ids: Vec<u32>,
    pub title_mask: Vec<bool>,
    pub entity_ids: Vec<u32>,
    pub entity_mask: Vec<bool>,
    pub topic_id: u32,
}

fn pad_ids(ids: impl Iterator<Item = u32>, len: usize) -> (Vec<u32>, Vec<bool>) {
    let mut out: Vec<u32> = ids.take(len).collect();
    out.resize(len, 0);
    let mask = out.iter().map(|&i| i != 0).collect();
    (out, mask)
}

impl EncodedNews {
    /// Build from raw id lists, truncating or right-padding to the given
    /// lengths.
    pub fn from_ids(title: &[u32], entities: &[u32], topic_id: u32, title_len: usize, entity_len: usize) -> Self {
        let (title_ids, title_mask) = pad_ids(title.iter().copied(), title_len);
        let (entity_ids, entity_mask) = pad_ids(entities.iter().copied(), entity_len);
        Self {
            title_ids,
            title_mask,
            entity_ids,
            entity_mask,
            topic_id,
        }
    }
}

pub fn encode_news(a: &NewsArticle, vocabs: &Vocabs, title_len: usize, entity_len: usize) -> EncodedNews {
    let (title_ids, title_mask) = pad_ids(a.title_tokens().iter().map(|t| vocabs.words.id(t)), title_len);
    let (entity_ids, entity_mask) = pad_ids(a.entities.iter().map(|e| vocabs.entities.id(e)), entity_len);
    EncodedNews {
        title_ids,
        title_mask,
        entity_ids,
        entity_mask,
        topic_id: vocabs.topics.id(&a.topic),
    }
}

/// Impression with news ids resolved to catalog positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedImpression {
    pub impression_id: u32,
    /// Oldest first.
    pub history: Vec<u32>,
    pub candidates: Vec<u32>,
    pub labels: Vec<u8>,
}

impl EncodedImpression {
    pub fn positives(&self) -> impl Iterator<Item = u32> + '_ {
        self.candidates.iter().zip(&self.labels).filter(|(_, &l)| l == 1).map(|(&c, _)| c)
    }

    pub fn negatives(&self) -> impl Iterator<Item = u32> + '_ {
        self.candidates.iter().zip(&self.labels).filter(|(_, &l)| l == 0).map(|(&c, _)| c)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EncodeStats {
    pub unresolved_history: usize,
    pub unresolved_candidates: usize,
    /// Impressions left with no resolvable candidate.
    pub dropped_impressions: usize,
}

/// Resolve ids against the catalog; unknown ids are dropped and counted.
pub fn encode_impressions(imps: &[Impression], catalog: &Catalog, stats: &mut EncodeStats) -> Vec<EncodedImpression> {
    let mut out = Vec::with_capacity(imps.len());
    for imp in imps {
        let mut history = Vec::with_capacity(imp.history.len());
        for h in &imp.history {
            match catalog.position(h) {
                Some(p) => history.push(p as u32),
                None => stats.unresolved_history += 1,
            }
        }
        let mut candidates = Vec::new();
        let mut labels = Vec::new();
        for (c, l) in &imp.candidates {
            match catalog.position(c) {
                Some(p) => {
                    candidates.push(p as u32);
                    labels.push(*l);
                }
                None => stats.unresolved_candidates += 1,
            }
        }
        if candidates.is_empty() {
            stats.dropped_impressions += 1;
            continue;
        }
        out.push(EncodedImpression {
            impression_id: imp.impression_id,
            history,
            candidates,
            labels,
        });
    }
    out
}

/// The `N` most recent clicks, right-padded with masked empty slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClickSlots {
    pub news: Vec<Option<u32>>,
    pub mask: Vec<bool>,
}

impl ClickSlots {
    pub fn len(&self) -> usize {
        self.news.len()
    }

    pub fn is_empty(&self) -> bool {
        self.news.is_empty()
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub fn encode_history(history: &[u32], n: usize) -> ClickSlots {
    let start = history.len().saturating_sub(n);
    let mut news: Vec<Option<u32>> = history[start..].iter().map(|&h| Some(h)).collect();
    news.resize(n, None);
    let mask = news.iter().map(Option::is_some).collect();
    ClickSlots { news, mask }
}

/// Encoded news plus train/validation impressions, indexable by catalog
/// position.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub news_ids: Vec<String>,
    pub news: Vec<EncodedNews>,
    pub train: Vec<EncodedImpression>,
    pub valid: Vec<EncodedImpression>,
    pub title_len: usize,
    pub entity_len: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub articles: usize,
    pub train_impressions: usize,
    pub valid_impressions: usize,
    pub positives: usize,
    pub empty_histories: usize,
    pub encode: EncodeStats,
}

impl EncodedDataset {
    pub fn build(
        catalog: &Catalog,
        vocabs: &Vocabs,
        train: &[Impression],
        valid: &[Impression],
        title_len: usize,
        entity_len: usize,
    ) -> (Self, CorpusStats) {
        let mut enc = EncodeStats::default();
        let news = catalog
            .articles()
            .iter()
            .map(|a| encode_news(a, vocabs, title_len, entity_len))
            .collect();
        let train = encode_impressions(train, catalog, &mut enc);
        let valid = encode_impressions(valid, catalog, &mut enc);
        let all = train.iter().chain(&valid);
        let stats = CorpusStats {
            articles: catalog.len(),
            train_impressions: train.len(),
            valid_impressions: valid.len(),
            positives: all.clone().map(|i| i.positives().count()).sum(),
            empty_histories: all.filter(|i| i.history.is_empty()).count(),
            encode: enc,
        };
        let ds = Self {
            news_ids: catalog.articles().iter().map(|a| a.news_id.clone()).collect(),
            news,
            train,
            valid,
            title_len,
            entity_len,
        };
        (ds, stats)
    }

    pub fn position(&self, news_id: &str) -> Option<u32> {
        self.news_ids.iter().position(|n| n == news_id).map(|p| p as u32)
    }

    fn split_entries(name: &str, imps: &[EncodedImpression], out: &mut Vec<Entry>) {
        let mut h_off = vec![0u32];
        let mut c_off = vec![0u32];
        let mut hist = Vec::new();
        let mut cands = Vec::new();
        let mut labels = Vec::new();
        for imp in imps {
            hist.extend_from_slice(&imp.history);
            h_off.push(hist.len() as u32);
            cands.extend_from_slice(&imp.candidates);
            labels.extend(imp.labels.iter().map(|&l| l as u32));
            c_off.push(cands.len() as u32);
        }
        let ids: Vec<u32> = imps.iter().map(|i| i.impression_id).collect();
        out.push(Entry::u32(format!("{name}.impression_id"), vec![ids.len()], ids));
        out.push(Entry::u32(format!("{name}.history_offsets"), vec![h_off.len()], h_off));
        out.push(Entry::u32(format!("{name}.history"), vec![hist.len()], hist));
        out.push(Entry::u32(format!("{name}.candidate_offsets"), vec![c_off.len()], c_off));
        out.push(Entry::u32(format!("{name}.candidates"), vec![cands.len()], cands));
        out.push(Entry::u32(format!("{name}.labels"), vec![labels.len()], labels));
    }

    pub fn to_entries(&self) -> Vec<Entry> {
        let n = self.news.len();
        let mut out = vec![
            Entry::u32("meta", vec![3], vec![self.title_len as u32, self.entity_len as u32, n as u32]),
            Entry::u32(
                "news.title",
                vec![n, self.title_len],
                self.news.iter().flat_map(|e| e.title_ids.iter().copied()).collect(),
            ),
            Entry::u32(
                "news.entity",
                vec![n, self.entity_len],
                self.news.iter().flat_map(|e| e.entity_ids.iter().copied()).collect(),
            ),
            Entry::u32("news.topic", vec![n], self.news.iter().map(|e| e.topic_id).collect()),
        ];
        Self::split_entries("train", &self.train, &mut out);
        Self::split_entries("valid", &self.valid, &mut out);
        out
    }

    pub fn from_entries(entries: Vec<Entry>, news_ids: Vec<String>, path: &Path) -> Result<Self> {
        let mut map = std::collections::HashMap::new();
        for e in entries {
            let Payload::U32(v) = e.payload else {
                return Err(Error::format(path, format!("{} is not an integer section", e.name)));
            };
            map.insert(e.name, v);
        }
        let mut take = |k: &str| {
            map.remove(k)
                .ok_or_else(|| Error::format(path, format!("missing section {k}")))
        };
        let meta = take("meta")?;
        let [title_len, entity_len, n] = meta[..] else {
            return Err(Error::format(path, "bad meta section"));
        };
        let (title_len, entity_len, n) = (title_len as usize, entity_len as usize, n as usize);
        if news_ids.len() != n {
            return Err(Error::format(path, "news id list does not match the cache"));
        }
        let titles = take("news.title")?;
        let ents = take("news.entity")?;
        let topics = take("news.topic")?;
        let news = (0..n)
            .map(|i| {
                EncodedNews::from_ids(
                    &titles[i * title_len..(i + 1) * title_len],
                    &ents[i * entity_len..(i + 1) * entity_len],
                    topics[i],
                    title_len,
                    entity_len,
                )
            })
            .collect();
        let mut split = |name: &str| -> Result<Vec<EncodedImpression>> {
            let ids = take(&format!("{name}.impression_id"))?;
            let h_off = take(&format!("{name}.history_offsets"))?;
            let hist = take(&format!("{name}.history"))?;
            let c_off = take(&format!("{name}.candidate_offsets"))?;
            let cands = take(&format!("{name}.candidates"))?;
            let labels = take(&format!("{name}.labels"))?;
            let mut out = Vec::with_capacity(ids.len());
            for (k, &id) in ids.iter().enumerate() {
                let (h0, h1) = (h_off[k] as usize, h_off[k + 1] as usize);
                let (c0, c1) = (c_off[k] as usize, c_off[k + 1] as usize);
                out.push(EncodedImpression {
                    impression_id: id,
                    history: hist[h0..h1].to_vec(),
                    candidates: cands[c0..c1].to_vec(),
                    labels: labels[c0..c1].iter().map(|&l| l as u8).collect(),
                });
            }
            Ok(out)
        };
        let train = split("train")?;
        let valid = split("valid")?;
        Ok(Self {
            news_ids,
            news,
            train,
            valid,
            title_len,
            entity_len,
        })
    }

    /// Writes `dataset.bin` and `news_ids.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_container(&dir.join("dataset.bin"), &self.to_entries())?;
        let ids = dir.join("news_ids.txt");
        let mut text = self.news_ids.join("\n");
        text.push('\n');
        std::fs::write(&ids, text).map_err(|e| Error::io(&ids, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("dataset.bin");
        let entries = read_container(&path)?;
        let ids_path = dir.join("news_ids.txt");
        let ids = std::fs::read_to_string(&ids_path).map_err(|e| Error::io(&ids_path, e))?;
        let news_ids = ids.lines().map(str::to_string).collect();
        Self::from_entries(entries, news_ids, &path)
    }

    /// Largest id per table, for vocabulary bound checks.
    pub fn max_ids(&self) -> (u32, u32, u32) {
        let mut m = (0, 0, 0);
        for n in &self.news {
            m.0 = m.0.max(n.title_ids.iter().copied().max().unwrap_or(0));
            m.1 = m.1.max(n.entity_ids.iter().copied().max().unwrap_or(0));
            m.2 = m.2.max(n.topic_id);
        }
        m
    }
}

/// Tokens of an encoded title, for display.
pub fn decode_title(news: &EncodedNews, words: &Vocab) -> String {
    news.title_ids
        .iter()
        .filter(|&&i| i != 0)
        .filter_map(|&i| words.token(i))
        .collect::<Vec<_>>()
        .join(" ")
}
