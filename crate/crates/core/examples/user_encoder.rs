//! How each candidate-aware block changes the user vector. With every block
//! switched off the user vector no longer depends on the candidate.
//!
//! cargo run --example user_encoder

use caum::config::{Ablation, ModelConfig};
use caum::kernels::OpCounter;
use caum::scorer::bench::random_instance;

fn spread(vectors: &[Vec<f64>]) -> f64 {
    let d = vectors[0].len();
    let mean: Vec<f64> = (0..d).map(|j| vectors.iter().map(|v| v[j]).sum::<f64>() / vectors.len() as f64).collect();
    vectors
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

fn main() -> caum::Result<()> {
    let variants = [
        Ablation::FULL,
        Ablation { candi_self_att: false, ..Ablation::FULL },
        Ablation { candi_cnn: false, ..Ablation::FULL },
        Ablation { candi_att: false, ..Ablation::FULL },
        Ablation::BASE,
    ];
    println!("{:<28} {:>22}", "variant", "user vector spread");
    for ablation in variants {
        let cfg = ModelConfig {
            ablation,
            ..ModelConfig::desk()
        };
        // same seed, so every variant sees the same clicks and candidates
        let (frozen, clicks, cands) = random_instance(&cfg, 8, 3)?;
        let pre = frozen.precompute(&clicks, &mut OpCounter::new())?;
        let users = cands
            .iter()
            .map(|c| frozen.amortized_user(&pre, c, &mut OpCounter::new()))
            .collect::<caum::Result<Vec<_>>>()?;
        println!("{:<28} {:>22.3e}", ablation.name(), spread(&users));
    }
    Ok(())
}
