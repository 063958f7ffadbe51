//! Per-impression ranking metrics and their aggregate report.
//!
//! cargo run --example ranking_metrics

use caum::metrics::{auc, evaluate, mrr, ndcg_at, ScoredImpression};

fn main() -> caum::Result<()> {
    let impressions = vec![
        ScoredImpression::new(vec![0.9, 0.1, 0.4, 0.3], vec![1, 0, 0, 0])?,
        ScoredImpression::new(vec![0.2, 0.8, 0.5], vec![1, 0, 1])?,
        // tied scores count half in AUC
        ScoredImpression::new(vec![0.5, 0.5], vec![0, 1])?,
        // no positive: left out of every mean
        ScoredImpression::new(vec![0.3, 0.6], vec![0, 0])?,
    ];
    for (i, s) in impressions.iter().enumerate() {
        let show = |m: Option<f64>| m.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "#{i}  ranking {:?}  AUC {}  MRR {}  nDCG@5 {}",
            s.ranking(),
            show(auc(s)),
            show(mrr(s)),
            show(ndcg_at(s, 5))
        );
    }
    let report = evaluate(&impressions);
    println!("\n{}", report.to_table());
    println!("{}", report.to_json());
    Ok(())
}
