//! Readers for the MIND `news.tsv` and `behaviors.tsv` layouts.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NewsArticle {
    pub news_id: String,
    pub topic: String,
    pub title: String,
    /// WikidataIds mentioned in the title, in field order.
    pub entities: Vec<String>,
}

impl NewsArticle {
    pub fn title_tokens(&self) -> Vec<String> {
        tokenize(&self.title)
    }
}

/// Lowercased words and single punctuation characters.
pub fn tokenize(text: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\w+|[^\s\w]").expect("token regex"));
    let lower = text.to_lowercase();
    re.find_iter(&lower).map(|m| m.as_str().to_string()).collect()
}

/// News articles keyed by id, kept in first-appearance order.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    articles: Vec<NewsArticle>,
    index: HashMap<String, usize>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace; returns `true` when the id was already present.
    pub fn insert(&mut self, a: NewsArticle) -> bool {
        match self.index.get(&a.news_id) {
            Some(&i) => {
                self.articles[i] = a;
                true
            }
            None => {
                self.index.insert(a.news_id.clone(), self.articles.len());
                self.articles.push(a);
                false
            }
        }
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn articles(&self) -> &[NewsArticle] {
        &self.articles
    }

    pub fn position(&self, news_id: &str) -> Option<usize> {
        self.index.get(news_id).copied()
    }

    pub fn get(&self, news_id: &str) -> Option<&NewsArticle> {
        self.position(news_id).map(|i| &self.articles[i])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NewsParseStats {
    pub lines: usize,
    pub malformed: usize,
    pub duplicates: usize,
}

#[derive(Deserialize)]
struct EntityRecord {
    #[serde(rename = "WikidataId")]
    wikidata_id: Option<String>,
}

fn parse_entities(field: &str) -> std::result::Result<Vec<String>, serde_json::Error> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(Vec::new());
    }
    let records: Vec<EntityRecord> = serde_json::from_str(field)?;
    Ok(records.into_iter().filter_map(|r| r.wikidata_id).collect())
}

fn parse_news_line(line: &str) -> Option<NewsArticle> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 8 {
        return None;
    }
    let news_id = fields[0].trim();
    if news_id.is_empty() {
        return None;
    }
    let entities = parse_entities(fields[6]).ok()?;
    Some(NewsArticle {
        news_id: news_id.to_string(),
        topic: fields[1].trim().to_string(),
        title: fields[3].to_string(),
        entities,
    })
}

/// Parse `news.tsv` content. Malformed lines are skipped and counted; more
/// than 10% malformed is a format error. A repeated id replaces the earlier
/// article and is counted as a duplicate.
pub fn parse_news_str(text: &str, source: &Path) -> Result<(Catalog, NewsParseStats)> {
    let mut catalog = Catalog::new();
    let mut stats = NewsParseStats::default();
    for line in text.lines() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        stats.lines += 1;
        match parse_news_line(line) {
            Some(a) => {
                if catalog.insert(a) {
                    stats.duplicates += 1;
                }
            }
            None => stats.malformed += 1,
        }
    }
    if stats.malformed * 10 > stats.lines {
        return Err(Error::format(
            source,
            format!("{} of {} lines malformed", stats.malformed, stats.lines),
        ));
    }
    if stats.malformed > 0 {
        log::warn!("{}: skipped {} malformed lines", source.display(), stats.malformed);
    }
    Ok((catalog, stats))
}

pub fn parse_news_tsv(path: &Path) -> Result<(Catalog, NewsParseStats)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_news_str(&text, path)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Impression {
    pub impression_id: u32,
    pub user_id: String,
    /// Clicked news ids, oldest first.
    pub history: Vec<String>,
    pub candidates: Vec<(String, u8)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BehaviorParseStats {
    pub lines: usize,
    /// Wrong field count or unparsable impression id.
    pub malformed: usize,
    /// A candidate token without a `-0` / `-1` suffix.
    pub bad_candidates: usize,
    pub empty_history: usize,
}

impl BehaviorParseStats {
    pub fn skipped(&self) -> usize {
        self.malformed + self.bad_candidates
    }
}

fn parse_candidate(tok: &str) -> Option<(String, u8)> {
    let (id, label) = tok.rsplit_once('-')?;
    let label = match label {
        "0" => 0,
        "1" => 1,
        _ => return None,
    };
    if id.is_empty() {
        return None;
    }
    Some((id.to_string(), label))
}

pub fn parse_behaviors_str(text: &str) -> (Vec<Impression>, BehaviorParseStats) {
    let mut out = Vec::new();
    let mut stats = BehaviorParseStats::default();
    for line in text.lines() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        stats.lines += 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            stats.malformed += 1;
            continue;
        }
        let Ok(impression_id) = fields[0].trim().parse::<u32>() else {
            stats.malformed += 1;
            continue;
        };
        let candidates: Option<Vec<_>> = fields[4].split_whitespace().map(parse_candidate).collect();
        let candidates = match candidates {
            Some(c) if !c.is_empty() => c,
            _ => {
                stats.bad_candidates += 1;
                continue;
            }
        };
        let history: Vec<String> = fields[3].split_whitespace().map(str::to_string).collect();
        if history.is_empty() {
            stats.empty_history += 1;
        }
        out.push(Impression {
            impression_id,
            user_id: fields[1].to_string(),
            history,
            candidates,
        });
    }
    (out, stats)
}

pub fn parse_behaviors_tsv(path: &Path) -> Result<(Vec<Impression>, BehaviorParseStats)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (imps, stats) = parse_behaviors_str(&text);
    if stats.skipped() > 0 {
        log::warn!("{}: skipped {} behavior lines", path.display(), stats.skipped());
    }
    Ok((imps, stats))
}

fn escape_json(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

/// MIND-layout `news.tsv` text for a set of articles.
pub fn news_to_tsv(articles: &[NewsArticle]) -> String {
    let mut s = String::new();
    for a in articles {
        let ents: Vec<String> = a
            .entities
            .iter()
            .map(|e| format!("{{\"WikidataId\": {}}}", escape_json(e)))
            .collect();
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t\t\t[{}]\t[]",
            a.news_id,
            a.topic,
            a.topic,
            a.title,
            ents.join(", ")
        );
    }
    s
}

pub fn behaviors_to_tsv(imps: &[Impression]) -> String {
    let mut s = String::new();
    for imp in imps {
        let cands: Vec<String> = imp
            .candidates
            .iter()
            .map(|(id, l)| format!("{id}-{l}"))
            .collect();
        let _ = writeln!(
            s,
            "{}\t{}\t\t{}\t{}",
            imp.impression_id,
            imp.user_id,
            imp.history.join(" "),
            cands.join(" ")
        );
    }
    s
}

pub fn news_to_tsv_file(path: &Path, articles: &[NewsArticle]) -> Result<()> {
    std::fs::write(path, news_to_tsv(articles)).map_err(|e| Error::io(path, e))
}

pub fn behaviors_to_tsv_file(path: &Path, imps: &[Impression]) -> Result<()> {
    std::fs::write(path, behaviors_to_tsv(imps)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const NEWS_LINE: &str = "N1\tsports\tfootball\tTrade talks: Smith, Jones!\tabstract\thttp://x\t[{\"Label\": \"Smith\", \"Type\": \"P\", \"WikidataId\": \"Q7\", \"Confidence\": 1.0}]\t[]";

    #[test]
    fn tokenizer_lowercases_and_splits_punctuation() {
        assert_eq!(tokenize("Trade talks: U.S."), ["trade", "talks", ":", "u", ".", "s", "."]);
        assert_eq!(tokenize("Trade"), tokenize("trade"));
    }

    #[test]
    fn parses_eight_field_line() {
        let (cat, stats) = parse_news_str(NEWS_LINE, Path::new("t")).unwrap();
        assert_eq!(stats, NewsParseStats { lines: 1, malformed: 0, duplicates: 0 });
        let a = cat.get("N1").unwrap();
        assert_eq!(a.topic, "sports");
        assert_eq!(a.entities, ["Q7"]);
        assert_eq!(a.title_tokens()[0], "trade");
    }

    #[test]
    fn empty_entity_list_and_duplicates() {
        let text = "N1\tnews\tx\tFirst\t\t\t[]\t[]\nN1\tnews\tx\tSecond\t\t\t\t[]\n";
        let (cat, stats) = parse_news_str(text, Path::new("t")).unwrap();
        assert_eq!(stats.duplicates, 1);
        assert_eq!(cat.len(), 1);
        assert_eq!(cat.get("N1").unwrap().title, "Second");
        assert!(cat.get("N1").unwrap().entities.is_empty());
    }

    #[test]
    fn too_many_malformed_lines_is_an_error() {
        let text = "N1\tnews\tx\tOk\t\t\t[]\t[]\nbroken line\n";
        assert!(matches!(
            parse_news_str(text, Path::new("t")),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn behaviors_candidates_and_history() {
        let text = "1\tU1\t11/11/2019 9:05:58 AM\tN3 N4\tN1-1 N2-0\n\
                    2\tU2\t\t\tN1-0 N5-1\n\
                    3\tU3\t\tN3\tN1-1 N2\n";
        let (imps, stats) = parse_behaviors_str(text);
        assert_eq!(imps.len(), 2);
        assert_eq!(imps[0].history, ["N3", "N4"]);
        assert_eq!(imps[0].candidates, [("N1".into(), 1), ("N2".into(), 0)]);
        assert!(imps[1].history.is_empty());
        assert_eq!(stats.bad_candidates, 1);
        assert_eq!(stats.empty_history, 1);
    }

    #[test]
    fn writers_produce_parsable_text() {
        let a = NewsArticle {
            news_id: "N9".into(),
            topic: "tech".into(),
            title: "Chips \"fast\"".into(),
            entities: vec!["Q1".into(), "Q2".into()],
        };
        let (cat, stats) = parse_news_str(&news_to_tsv(std::slice::from_ref(&a)), Path::new("t")).unwrap();
        assert_eq!(stats.malformed, 0);
        assert_eq!(cat.get("N9"), Some(&a));
        let imp = Impression {
            impression_id: 4,
            user_id: "U".into(),
            history: vec!["N9".into()],
            candidates: vec![("N9".into(), 1)],
        };
        let (back, _) = parse_behaviors_str(&behaviors_to_tsv(std::slice::from_ref(&imp)));
        assert_eq!(back, [imp]);
    }
}
