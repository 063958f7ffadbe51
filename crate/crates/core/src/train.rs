//! Pairwise BPR training over impressions.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{adam_step, log_sigmoid, AdamConfig, Graph, Var};
use crate::config::TrainConfig;
use crate::data::{EncodedDataset, EncodedImpression};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::model::{news, user, CaumModel};
use crate::scorer::evaluate_model;

/// `u · n_c` for plain vectors.
pub fn match_score(u: &[f64], n_c: &[f64]) -> Result<f64> {
    if u.len() != n_c.len() {
        return Err(Error::shape("match score", &[u.len()], &[n_c.len()]));
    }
    Ok(u.iter().zip(n_c).map(|(a, b)| a * b).sum())
}

/// Mean of `-ln σ(pos - neg)` over score pairs.
pub fn bpr_loss(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Contract("BPR loss of an empty batch".into()));
    }
    Ok(-pairs.iter().map(|&(p, n)| log_sigmoid(p - n)).sum::<f64>() / pairs.len() as f64)
}

/// Tape version of [`bpr_loss`] over `1 × 1` score differences.
pub fn bpr_loss_node(g: &mut Graph, diffs: &[Var]) -> Result<Var> {
    if diffs.is_empty() {
        return Err(Error::Contract("BPR loss of an empty batch".into()));
    }
    let all = g.concat(diffs, 0)?;
    let ls = g.log_sigmoid(all);
    let mean = g.mean(ls);
    Ok(g.scale(mean, -1.0))
}

/// One positive and one negative from the same impression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainPair {
    /// Index into the impression list being trained on.
    pub impression: usize,
    pub positive: u32,
    pub negative: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SampleStats {
    pub no_positive: usize,
    pub no_negative: usize,
    pub empty_history: usize,
}

impl SampleStats {
    pub fn skipped(&self) -> usize {
        self.no_positive + self.no_negative + self.empty_history
    }
}

/// For every positive, `k` negatives drawn uniformly without replacement,
/// or with replacement when the impression has fewer than `k`. `None` when
/// the impression lacks either class.
pub fn sample_pairs(
    imp: &EncodedImpression,
    index: usize,
    rng: &mut impl Rng,
    k: usize,
    stats: &mut SampleStats,
) -> Option<Vec<TrainPair>> {
    let pos: Vec<u32> = imp.positives().collect();
    let neg: Vec<u32> = imp.negatives().collect();
    if pos.is_empty() {
        stats.no_positive += 1;
        return None;
    }
    if neg.is_empty() {
        stats.no_negative += 1;
        return None;
    }
    let mut out = Vec::with_capacity(pos.len() * k);
    for &p in &pos {
        let draws: Vec<u32> = if neg.len() >= k {
            rand::seq::index::sample(rng, neg.len(), k).into_iter().map(|i| neg[i]).collect()
        } else {
            (0..k).map(|_| neg[rng.random_range(0..neg.len())]).collect()
        };
        out.extend(draws.into_iter().map(|n| TrainPair {
            impression: index,
            positive: p,
            negative: n,
        }));
    }
    Some(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

pub fn loss_csv(records: &[LossRecord]) -> String {
    let mut s = String::from("epoch,step,loss\n");
    for r in records {
        let _ = writeln!(s, "{},{},{:.17e}", r.epoch, r.step, r.loss);
    }
    s
}

#[derive(Debug, Clone)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train: Option<MetricReport>,
    pub valid: Option<MetricReport>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub losses: Vec<LossRecord>,
    pub epochs: Vec<EpochSummary>,
    pub skipped: SampleStats,
    pub adam_skipped: usize,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Checkpoints and the loss log go here when set.
    pub out_dir: Option<PathBuf>,
    /// Also evaluate on the training impressions after every epoch.
    pub eval_train: bool,
    /// Evaluate on the validation split after every epoch.
    pub eval_valid: bool,
}

/// BPR loss node for a batch of pairs. Each distinct article is encoded once
/// and each impression's click context is shared by its pairs.
pub fn batch_loss(
    g: &mut Graph,
    model: &CaumModel,
    data: &EncodedDataset,
    imps: &[EncodedImpression],
    pairs: &[TrainPair],
) -> Result<Var> {
    let cfg = &model.config;
    let mut vectors: HashMap<u32, Var> = HashMap::new();
    let mut encode = |g: &mut Graph, pos: u32| -> Result<Var> {
        if let Some(&v) = vectors.get(&pos) {
            return Ok(v);
        }
        let n = data.news.get(pos as usize).ok_or(Error::Index {
            id: pos as usize,
            len: data.news.len(),
        })?;
        let v = news::encode_news(g, &model.ids.news, cfg, n)?;
        vectors.insert(pos, v);
        Ok(v)
    };
    let mut contexts: HashMap<usize, user::ClickContext> = HashMap::new();
    let mut diffs = Vec::with_capacity(pairs.len());
    for pair in pairs {
        if let std::collections::hash_map::Entry::Vacant(e) = contexts.entry(pair.impression) {
            // right-padded slots only ever meet zero rows and zero weights, so
            // the history is passed without its padding
            let hist = &imps[pair.impression].history;
            let recent = &hist[hist.len().saturating_sub(cfg.history_len)..];
            let rows = recent.iter().map(|&h| encode(g, h)).collect::<Result<Vec<_>>>()?;
            let clicks = g.concat(&rows, 0)?;
            let ctx = user::ClickContext::new(g, &model.ids.user, cfg, clicks, &vec![true; rows.len()])?;
            e.insert(ctx);
        }
        let ctx = contexts[&pair.impression].clone();
        let np = encode(g, pair.positive)?;
        let nn = encode(g, pair.negative)?;
        let up = user::encode_user(g, &model.ids.user, cfg, &ctx, np)?;
        let un = user::encode_user(g, &model.ids.user, cfg, &ctx, nn)?;
        let sp = user::match_score(g, up, np)?;
        let sn = user::match_score(g, un, nn)?;
        diffs.push(g.sub(sp, sn)?);
    }
    bpr_loss_node(g, &diffs)
}

/// Forward and backward pass over one batch; returns the loss and leaves
/// the gradients in the model's store.
pub fn batch_step(model: &mut CaumModel, data: &EncodedDataset, imps: &[EncodedImpression], pairs: &[TrainPair]) -> Result<f64> {
    let mut g = Graph::with_params(&model.params);
    let loss = batch_loss(&mut g, model, data, imps, pairs)?;
    let value = g.scalar(loss);
    g.backward(loss)?;
    let grads = g.into_param_grads();
    model.params.zero_grad();
    model.params.accumulate(&grads);
    Ok(value)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Shuffled mini-batch Adam over `data.train`. Impressions with an empty
/// history or a single class are skipped and counted.
pub fn train(model: &mut CaumModel, data: &EncodedDataset, cfg: &TrainConfig, opts: &TrainOptions) -> Result<TrainReport> {
    cfg.validate()?;
    let imps = &data.train;
    if imps.is_empty() {
        return Err(Error::Contract("training split is empty".into()));
    }
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..imps.len()).collect();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut stats = SampleStats::default();
        let mut pairs = Vec::new();
        for &i in &order {
            if imps[i].history.is_empty() {
                stats.empty_history += 1;
                continue;
            }
            if let Some(p) = sample_pairs(&imps[i], i, &mut rng, cfg.negatives, &mut stats) {
                pairs.extend(p);
            }
        }
        if pairs.is_empty() {
            return Err(Error::Contract("no impression yields a training pair".into()));
        }
        let mut total = 0.0;
        let batches = pairs.chunks(cfg.batch_size);
        let n_batches = batches.len();
        for (b, batch) in batches.enumerate() {
            let loss = batch_step(model, data, imps, batch)?;
            if !loss.is_finite() {
                return Err(Error::NanLoss { epoch, batch: b });
            }
            let r = adam_step(&mut model.params, &adam);
            report.adam_skipped += r.skipped;
            step += 1;
            total += loss;
            report.losses.push(LossRecord { epoch, step, loss });
        }
        report.skipped = stats;

        let mut summary = EpochSummary {
            epoch,
            mean_loss: total / n_batches as f64,
            train: None,
            valid: None,
            checkpoint: None,
        };
        if opts.eval_train || (opts.eval_valid && !data.valid.is_empty()) {
            let vecs = model.news_vectors(&data.news)?;
            if opts.eval_train {
                summary.train = Some(evaluate_model(model, &vecs, imps)?);
            }
            if opts.eval_valid && !data.valid.is_empty() {
                summary.valid = Some(evaluate_model(model, &vecs, &data.valid)?);
            }
        }
        if let Some(dir) = &opts.out_dir {
            let path = dir.join(format!("epoch-{epoch}.ckpt"));
            model.save(&path)?;
            write_file(&dir.join("loss.csv"), &loss_csv(&report.losses))?;
            summary.checkpoint = Some(path);
        }
        log::info!(
            "epoch {epoch}: loss {:.5}{}{}",
            summary.mean_loss,
            summary.train.as_ref().map(|r| format!(", train AUC {:.4}", r.auc.mean)).unwrap_or_default(),
            summary.valid.as_ref().map(|r| format!(", valid AUC {:.4}", r.auc.mean)).unwrap_or_default()
        );
        report.epochs.push(summary);
    }
    Ok(report)
}
