//! Parse a MIND-format news and behaviors pair, report what was skipped and
//! encode it. Defaults to the small fixtures shipped with the tests.
//!
//! cargo run --example mind_ingest [news.tsv behaviors.tsv]

use std::path::PathBuf;

use caum::data::{parse_behaviors_tsv, parse_news_tsv, prepare};

fn main() -> caum::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let mut args = std::env::args().skip(1).map(PathBuf::from);
    let news = args.next().unwrap_or_else(|| fixtures.join("news.tsv"));
    let behaviors = args.next().unwrap_or_else(|| fixtures.join("behaviors.tsv"));

    let (catalog, ns) = parse_news_tsv(&news)?;
    println!("news: {} lines, {} malformed, {} duplicate ids, {} articles", ns.lines, ns.malformed, ns.duplicates, catalog.len());
    let (imps, bs) = parse_behaviors_tsv(&behaviors)?;
    println!(
        "behaviors: {} lines, {} malformed, {} bad candidates, {} empty histories",
        bs.lines, bs.malformed, bs.bad_candidates, bs.empty_history
    );

    let (data, vocabs, stats) = prepare(&catalog, &imps, &[], 30, 5)?;
    println!("unresolved: {:?}", stats.encode);
    println!(
        "vocab sizes: {:?}; {} impressions encoded, {} positives",
        vocabs.sizes(),
        data.train.len(),
        stats.positives
    );
    if let Some(first) = data.train.first() {
        let ids = |v: &[u32]| v.iter().map(|&p| data.news_ids[p as usize].as_str()).collect::<Vec<_>>();
        println!("first impression: history {:?}, candidates {:?}, labels {:?}", ids(&first.history), ids(&first.candidates), first.labels);
    }
    Ok(())
}
