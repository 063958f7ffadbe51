//! Wall-clock and multiplication counts of naive versus amortized scoring
//! over a small grid.
//!
//! cargo run --release --example benchmark [grid]

use caum::scorer::bench::{run, BenchGrid};

fn main() -> caum::Result<()> {
    let spec = std::env::args().nth(1).unwrap_or_else(|| "N=20:50,M=10:50,d=64".to_string());
    let report = run(&BenchGrid::parse(&spec, 5)?)?;
    print!("{}", report.summary());
    Ok(())
}
