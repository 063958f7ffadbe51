//! Train the desk preset on a generated corpus and compare the full model
//! with the candidate-agnostic base variant.
//!
//! cargo run --release --example train_synthetic

use caum::config::{Ablation, ModelConfig, TrainConfig};
use caum::data::{generate, prepare, SyntheticConfig};
use caum::model::CaumModel;
use caum::train::{train, TrainOptions};

fn main() -> caum::Result<()> {
    let corpus = generate(&SyntheticConfig::default())?;
    let model_cfg = ModelConfig::desk();
    let (data, vocabs, stats) = prepare(
        &corpus.catalog,
        &corpus.train,
        &corpus.valid,
        model_cfg.title_len,
        model_cfg.entity_len,
    )?;
    println!("{} articles, {} train / {} valid impressions", stats.articles, stats.train_impressions, stats.valid_impressions);

    let train_cfg = TrainConfig::desk();
    let opts = TrainOptions {
        eval_train: true,
        eval_valid: true,
        ..TrainOptions::default()
    };
    for ablation in [Ablation::FULL, Ablation::BASE] {
        let cfg = ModelConfig { ablation, ..model_cfg.clone() };
        let mut model = CaumModel::new(cfg, vocabs.sizes(), train_cfg.seed)?;
        let t = std::time::Instant::now();
        let report = train(&mut model, &data, &train_cfg, &opts)?;
        println!("== {} ({:.1}s)", ablation.name(), t.elapsed().as_secs_f64());
        for e in &report.epochs {
            println!(
                "epoch {:>2}  loss {:.4}  train AUC {:.4}  valid AUC {:.4}",
                e.epoch,
                e.mean_loss,
                e.train.as_ref().map_or(f64::NAN, |r| r.auc.mean),
                e.valid.as_ref().map_or(f64::NAN, |r| r.auc.mean)
            );
        }
    }
    Ok(())
}
