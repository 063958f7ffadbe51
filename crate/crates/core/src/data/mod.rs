//! MIND-format ingestion, vocabularies, fixed-length encoding and a
//! synthetic corpus generator.

pub mod encode;
pub mod mind;
pub mod synthetic;
pub mod vocab;

pub use encode::{
    encode_history, encode_impressions, encode_news, ClickSlots, CorpusStats, EncodeStats, EncodedDataset,
    EncodedImpression, EncodedNews,
};
pub use mind::{
    behaviors_to_tsv, behaviors_to_tsv_file, news_to_tsv, news_to_tsv_file, parse_behaviors_str, parse_behaviors_tsv, parse_news_str, parse_news_tsv, tokenize, BehaviorParseStats, Catalog,
    Impression, NewsArticle, NewsParseStats,
};
pub use synthetic::{generate, SyntheticConfig, SyntheticCorpus};
pub use vocab::{build_vocabs, Vocab, VocabSizes, Vocabs};

/// Vocabularies and the encoded dataset for a parsed corpus.
pub fn prepare(
    catalog: &Catalog,
    train: &[Impression],
    valid: &[Impression],
    title_len: usize,
    entity_len: usize,
) -> crate::Result<(EncodedDataset, Vocabs, CorpusStats)> {
    let vocabs = build_vocabs(catalog)?;
    let (ds, stats) = EncodedDataset::build(catalog, &vocabs, train, valid, title_len, entity_len);
    Ok((ds, vocabs, stats))
}
