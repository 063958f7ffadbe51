//! Score one user's candidates twice: recomputing the user vector per
//! candidate, and from a per-user cache. Both give the same scores.
//!
//! cargo run --release --example amortized_scoring

use std::time::Instant;

use caum::kernels::OpCounter;
use caum::scorer::bench::{bench_config, random_instance};

fn main() -> caum::Result<()> {
    let cfg = bench_config(64, 50);
    let (frozen, clicks, cands) = random_instance(&cfg, 50, 7)?;

    let mut naive_ops = OpCounter::new();
    let t = Instant::now();
    let naive = frozen.naive_scores(&clicks, &cands, &mut naive_ops)?;
    let naive_time = t.elapsed();

    let mut ops = OpCounter::new();
    let t = Instant::now();
    let cache = frozen.precompute(&clicks, &mut ops)?;
    let cache_time = t.elapsed();
    let amortized = frozen.score_candidates(&cache, &cands, &mut ops)?;
    let total_time = t.elapsed();

    let gap = naive.iter().zip(&amortized).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("{} candidates, N={} d={}", cands.len(), cfg.history_len, cfg.dim);
    println!("naive      {:>12} mults  {:>9.2?}", naive_ops.total(), naive_time);
    println!(
        "amortized  {:>12} mults  {:>9.2?}  (cache {} mults, {:.2?})",
        ops.total(),
        total_time,
        ops.precompute,
        cache_time
    );
    println!("largest score difference {gap:.2e}");

    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| amortized[b].total_cmp(&amortized[a]));
    println!("top five: {:?}", &order[..5]);
    Ok(())
}
