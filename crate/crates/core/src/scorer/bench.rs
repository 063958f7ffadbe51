//! Wall-clock and multiplication-count comparison of the naive and amortized
//! scoring paths over a grid of history lengths, candidate counts and widths.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ClickMatrix, FrozenModel};
use crate::config::ModelConfig;
use crate::data::VocabSizes;
use crate::error::{Error, Result};
use crate::kernels::{Mat, OpCounter};
use crate::model::CaumModel;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchGrid {
    pub history: Vec<usize>,
    pub candidates: Vec<usize>,
    pub dims: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
}

impl Default for BenchGrid {
    fn default() -> Self {
        Self {
            history: vec![50],
            candidates: vec![1, 10, 50, 100],
            dims: vec![64],
            reps: 10,
            seed: 0,
        }
    }
}

impl BenchGrid {
    /// Parse `N=50,M=10:50:100,d=64`; lists inside a key are `:`-separated.
    pub fn parse(spec: &str, reps: usize) -> Result<Self> {
        let mut g = Self {
            reps,
            ..Self::default()
        };
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("grid entry {part:?} is not key=value")))?;
            let vals = v
                .split(':')
                .map(|x| x.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::Config(format!("grid entry {part:?} has a non-integer value")))?;
            if vals.is_empty() || vals.contains(&0) {
                return Err(Error::Config(format!("grid entry {part:?} needs positive values")));
            }
            match k.trim() {
                "N" => g.history = vals,
                "M" => g.candidates = vals,
                "d" => g.dims = vals,
                other => return Err(Error::Config(format!("unknown grid key {other:?}; expected N, M or d"))),
            }
        }
        if g.reps == 0 {
            return Err(Error::Config("reps must be positive".into()));
        }
        Ok(g)
    }
}

/// Model shape used for a bench point: desk head width, `heads = d / 16`.
pub fn bench_config(dim: usize, history: usize) -> ModelConfig {
    let head_dim = if dim.is_multiple_of(16) { 16 } else { dim };
    ModelConfig {
        dim,
        heads: dim / head_dim,
        head_dim,
        history_len: history,
        window_half: if history >= 3 { 1 } else { 0 },
        ..ModelConfig::desk()
    }
}

/// Random frozen parameters, clicks and candidates for one grid point.
pub fn random_instance(
    cfg: &ModelConfig,
    m: usize,
    seed: u64,
) -> Result<(FrozenModel<f64>, ClickMatrix<f64>, Vec<Vec<f64>>)> {
    let sizes = VocabSizes {
        words: 2,
        entities: 2,
        topics: 2,
    };
    let model = CaumModel::new(cfg.clone(), sizes, seed)?;
    let frozen = FrozenModel::from_model(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let normal = Normal::new(0.0, 0.5).expect("valid normal");
    let (n, d) = (cfg.history_len, cfg.dim);
    let clicks = Mat::from_vec(n, d, (0..n * d).map(|_| normal.sample(&mut rng)).collect());
    let clicks = ClickMatrix::new(clicks, vec![true; n])?;
    let cands = (0..m).map(|_| (0..d).map(|_| normal.sample(&mut rng)).collect()).collect();
    Ok((frozen, clicks, cands))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub variant: &'static str,
    pub history: usize,
    pub candidates: usize,
    pub dim: usize,
    pub reps: usize,
    pub median_ns: u128,
    pub mult_count: u64,
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Largest naive/amortized score gap seen while verifying.
    pub max_discrepancy: f64,
}

fn median(mut xs: Vec<u128>) -> u128 {
    xs.sort_unstable();
    xs[xs.len() / 2]
}

pub fn run(grid: &BenchGrid) -> Result<BenchReport> {
    let mut report = BenchReport::default();
    for &d in &grid.dims {
        for &n in &grid.history {
            let cfg = bench_config(d, n);
            cfg.validate()?;
            let max_m = *grid.candidates.iter().max().expect("non-empty grid");
            let (frozen, clicks, all) = random_instance(&cfg, max_m, grid.seed)?;
            for &m in &grid.candidates {
                let cands = &all[..m];
                let mut c_naive = OpCounter::new();
                let naive = frozen.naive_scores(&clicks, cands, &mut c_naive)?;
                let mut c_amort = OpCounter::new();
                let amort = frozen.score(&clicks, cands, &mut c_amort)?;
                let gap = naive.iter().zip(&amort).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                report.max_discrepancy = report.max_discrepancy.max(gap);
                if gap >= 1e-9 {
                    return Err(Error::Contract(format!(
                        "naive and amortized scores differ by {gap:e} at N={n}, M={m}, d={d}"
                    )));
                }
                let mut t_naive = Vec::with_capacity(grid.reps);
                let mut t_amort = Vec::with_capacity(grid.reps);
                for _ in 0..grid.reps {
                    let mut c = OpCounter::new();
                    let t = Instant::now();
                    std::hint::black_box(frozen.naive_scores(&clicks, cands, &mut c)?);
                    t_naive.push(t.elapsed().as_nanos());
                    let mut c = OpCounter::new();
                    let t = Instant::now();
                    std::hint::black_box(frozen.score(&clicks, cands, &mut c)?);
                    t_amort.push(t.elapsed().as_nanos());
                }
                for (variant, times, count) in [
                    ("naive", t_naive, c_naive.total()),
                    ("amortized", t_amort, c_amort.total()),
                ] {
                    report.rows.push(BenchRow {
                        variant,
                        history: n,
                        candidates: m,
                        dim: d,
                        reps: grid.reps,
                        median_ns: median(times),
                        mult_count: count,
                    });
                }
            }
        }
    }
    Ok(report)
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,N,M,d,reps,median_ns,mult_count\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.variant, r.history, r.candidates, r.dim, r.reps, r.median_ns, r.mult_count
            );
        }
        s
    }

    pub fn find(&self, variant: &str, n: usize, m: usize, d: usize) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.history == n && r.candidates == m && r.dim == d)
    }

    /// Aligned table with the naive/amortized time ratio per grid point.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{:>5} {:>5} {:>5} {:>14} {:>14} {:>8} {:>14} {:>14}\n",
            "N", "M", "d", "naive_ns", "amortized_ns", "speedup", "naive_mults", "amort_mults"
        );
        for a in self.rows.iter().filter(|r| r.variant == "naive") {
            if let Some(b) = self.find("amortized", a.history, a.candidates, a.dim) {
                let _ = writeln!(
                    s,
                    "{:>5} {:>5} {:>5} {:>14} {:>14} {:>8.2} {:>14} {:>14}",
                    a.history,
                    a.candidates,
                    a.dim,
                    a.median_ns,
                    b.median_ns,
                    a.median_ns as f64 / b.median_ns.max(1) as f64,
                    a.mult_count,
                    b.mult_count
                );
            }
        }
        let _ = writeln!(s, "max naive/amortized score gap: {:e}", self.max_discrepancy);
        s
    }
}
