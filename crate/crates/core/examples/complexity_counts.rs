//! Counted multiplications of the amortized scorer at full width, broken down
//! by stage and set against the coarse `(3N + M)d² + (N² + MN)d` estimate.
//!
//! cargo run --release --example complexity_counts

use caum::config::ModelConfig;
use caum::kernels::OpCounter;
use caum::scorer::bench::random_instance;

fn main() -> caum::Result<()> {
    let cfg = ModelConfig::paper();
    let m = 100u64;
    let (n, d, k, dh, h, hid) = (
        cfg.history_len as u64,
        cfg.dim as u64,
        cfg.heads as u64,
        cfg.head_dim as u64,
        cfg.window_half as u64,
        cfg.phi_hidden as u64,
    );
    let (frozen, clicks, cands) = random_instance(&cfg, m as usize, 0)?;
    let mut counter = OpCounter::new();
    frozen.score(&clicks, &cands, &mut counter)?;

    let precompute = [
        ("query projection", n * d * d),
        ("per-head values and outputs", k * (n * d * d + n * d * dh)),
        ("per-head click-click scores", k * n * n * d),
        ("window filter", n * (2 * h + 1) * d * d),
    ];
    let per_candidate = [
        ("candidate query", d * d),
        ("candidate shift of the scores", k * n * d),
        ("reweighted attention", k * n * n * (dh + 1)),
        ("candidate part of the filter", d * d),
        ("fusion", n * 2 * d * d),
        ("relevance hidden layer", n * d * hid + hid * d),
        ("relevance output and pooling", n * hid + n * d),
        ("final dot product", d),
    ];
    println!("N={n} d={d} K={k} d_h={dh} window={} hidden={hid}, M={m}\n", 2 * h + 1);
    let show = |title: &str, rows: &[(&str, u64)]| {
        println!("{title}");
        for (name, v) in rows {
            println!("  {name:<32} {v:>14}");
        }
        let total: u64 = rows.iter().map(|r| r.1).sum();
        println!("  {:<32} {total:>14}\n", "total");
        total
    };
    let pre = show("once per user", &precompute);
    let per = show("per candidate", &per_candidate);
    assert_eq!(counter.precompute, pre);
    assert_eq!(counter.per_candidate, m * per);

    let coarse = (3 * n + m) * d * d + (n * n + m * n) * d;
    let counted = counter.total();
    println!("counted {counted} vs coarse estimate {coarse}: {:.1}x", counted as f64 / coarse as f64);
    println!(
        "the estimate charges d² + Nd per candidate; the fused rows depend on the candidate, so the\n\
         N x 2d by 2d x d fusion alone costs {:.0}x that, and the K heads multiply the d² projections",
        (n * 2 * d * d) as f64 / (d * d + n * d) as f64
    );
    Ok(())
}
