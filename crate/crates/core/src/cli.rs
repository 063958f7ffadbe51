//! Command-line front end: `prepare`, `train`, `eval`, `score`, `bench`.
//!
//! The binary only parses arguments and calls [`run`]; everything else lives
//! here so it can be exercised from tests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::data::{
    self, behaviors_to_tsv_file, encode_history, generate, news_to_tsv_file, parse_behaviors_tsv, parse_news_tsv,
    Catalog, EncodedDataset, SyntheticConfig, Vocabs,
};
use crate::error::{Error, Result};
use crate::kernels::OpCounter;
use crate::model::CaumModel;
use crate::scorer::bench::{self, BenchGrid};
use crate::scorer::{evaluate_model, ClickMatrix, FrozenModel};
use crate::train::{train, TrainOptions};

#[derive(Debug, Parser)]
#[command(name = "caum", version, about = "Candidate-aware user modeling for news recommendation")]
pub struct Cli {
    /// Cap on worker threads for parallel sections.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse MIND-format TSV files into an encoded dataset and vocabularies.
    Prepare(PrepareArgs),
    /// Train with BPR and Adam; writes per-epoch checkpoints and a loss log.
    Train(TrainArgs),
    /// Ranking metrics of a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Rank candidate news for one click history.
    Score(ScoreArgs),
    /// Time the naive and amortized scoring paths.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Training news.tsv.
    #[arg(long, required_unless_present = "synthetic")]
    pub news: Option<PathBuf>,
    /// Training behaviors.tsv.
    #[arg(long, required_unless_present = "synthetic")]
    pub behaviors: Option<PathBuf>,
    /// Extra news.tsv for the validation split (merged into the catalog).
    #[arg(long)]
    pub valid_news: Option<PathBuf>,
    /// Validation behaviors.tsv.
    #[arg(long)]
    pub valid_behaviors: Option<PathBuf>,
    /// Generate a synthetic corpus instead of reading files; the raw TSVs are
    /// written to `<out>/raw`.
    #[arg(long)]
    pub synthetic: bool,
    /// Seed of the synthetic generator.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Title tokens kept per article.
    #[arg(long, default_value_t = 30)]
    pub title_len: usize,
    /// Entities kept per article.
    #[arg(long, default_value_t = 5)]
    pub entity_len: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Every configuration key as a flag; a flag overrides the same key in
/// `--config`.
#[derive(Debug, Args, Default)]
pub struct ConfigFlags {
    /// Flat `key = value` file using the flag names as keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Starting point for all settings: paper or desk.
    #[arg(long)]
    pub preset: Option<String>,
    /// News and user vector width.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Attention heads.
    #[arg(long)]
    pub heads: Option<usize>,
    /// Per-head width; heads * head-dim must equal dim.
    #[arg(long)]
    pub head_dim: Option<usize>,
    /// Half width h of the click window (window is 2h+1).
    #[arg(long)]
    pub window_half: Option<usize>,
    /// Clicked news kept per user.
    #[arg(long)]
    pub history_len: Option<usize>,
    /// Title tokens per article.
    #[arg(long)]
    pub title_len: Option<usize>,
    /// Entities per article.
    #[arg(long)]
    pub entity_len: Option<usize>,
    /// Hidden width of the click relevance MLP.
    #[arg(long)]
    pub phi_hidden: Option<usize>,
    /// Query width of the news pooling layer.
    #[arg(long)]
    pub pool_hidden: Option<usize>,
    /// Bias in the click window filter.
    #[arg(long, value_parser = ["on", "off"])]
    pub cnn_bias: Option<String>,
    /// Candidate term in the click self-attention.
    #[arg(long, value_parser = ["on", "off"])]
    pub candi_self_att: Option<String>,
    /// Candidate input to the click window filter.
    #[arg(long, value_parser = ["on", "off"])]
    pub candi_cnn: Option<String>,
    /// Candidate input to the click pooling weights.
    #[arg(long, value_parser = ["on", "off"])]
    pub candi_att: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Training pairs per batch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Negatives sampled per positive.
    #[arg(long)]
    pub negatives: Option<usize>,
}

impl ConfigFlags {
    fn to_kv(&self, threads: Option<usize>) -> BTreeMap<String, String> {
        let mut kv = BTreeMap::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                kv.insert(k.to_string(), v);
            }
        };
        let s = |x: Option<usize>| x.map(|v| v.to_string());
        put("preset", self.preset.clone());
        put("dim", s(self.dim));
        put("heads", s(self.heads));
        put("head-dim", s(self.head_dim));
        put("window-half", s(self.window_half));
        put("history-len", s(self.history_len));
        put("title-len", s(self.title_len));
        put("entity-len", s(self.entity_len));
        put("phi-hidden", s(self.phi_hidden));
        put("pool-hidden", s(self.pool_hidden));
        put("cnn-bias", self.cnn_bias.clone());
        put("candi-self-att", self.candi_self_att.clone());
        put("candi-cnn", self.candi_cnn.clone());
        put("candi-att", self.candi_att.clone());
        put("epochs", s(self.epochs));
        put("lr", self.lr.map(|v| v.to_string()));
        put("batch-size", s(self.batch_size));
        put("seed", self.seed.map(|v| v.to_string()));
        put("negatives", s(self.negatives));
        put("threads", s(threads));
        kv
    }

    /// File settings first (preset, then keys), then flags the same way.
    pub fn resolve(&self, threads: Option<usize>) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(&self.to_kv(threads))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigFlags,
    /// Directory written by `prepare`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also report training-split metrics after every epoch.
    #[arg(long)]
    pub eval_train: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    Json,
    Both,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Model config; defaults to `config.txt` next to the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Split::Valid)]
    pub split: Split,
    #[arg(long, value_enum, default_value_t = ReportFormat::Both)]
    pub format: ReportFormat,
    /// Also write `metrics.json` and `metrics.txt` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Model config; defaults to `config.txt` next to the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Clicked news ids, oldest first, comma or space separated, or a file
    /// holding them.
    #[arg(long)]
    pub user_history: String,
    /// Candidate news ids, same syntax as --user-history.
    #[arg(long)]
    pub candidates: String,
    /// Encode the user separately for every candidate.
    #[arg(long)]
    pub naive: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Grid such as `N=50,M=1:10:50:100,d=64`; lists are `:`-separated.
    #[arg(long, default_value = "N=50,M=1:10:50:100,d=64")]
    pub grid: String,
    /// Timed repetitions per point; the median is reported.
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for `bench.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn cmd_prepare(a: &PrepareArgs) -> Result<String> {
    create_dir(&a.out)?;
    let mut report = String::new();
    let (news_paths, train_path, valid_path) = if a.synthetic {
        let corpus = generate(&SyntheticConfig {
            seed: a.seed,
            ..SyntheticConfig::default()
        })?;
        let raw = a.out.join("raw");
        create_dir(&raw)?;
        news_to_tsv_file(&raw.join("news.tsv"), corpus.catalog.articles())?;
        behaviors_to_tsv_file(&raw.join("behaviors.tsv"), &corpus.train)?;
        behaviors_to_tsv_file(&raw.join("valid_behaviors.tsv"), &corpus.valid)?;
        (vec![raw.join("news.tsv")], raw.join("behaviors.tsv"), Some(raw.join("valid_behaviors.tsv")))
    } else {
        let mut paths = vec![a.news.clone().expect("required by clap")];
        paths.extend(a.valid_news.clone());
        (paths, a.behaviors.clone().expect("required by clap"), a.valid_behaviors.clone())
    };

    let mut catalog = Catalog::new();
    for p in &news_paths {
        let (cat, st) = parse_news_tsv(p)?;
        for art in cat.articles() {
            catalog.insert(art.clone());
        }
        let _ = writeln!(
            report,
            "{}: {} lines, {} malformed, {} duplicates",
            p.display(),
            st.lines,
            st.malformed,
            st.duplicates
        );
    }
    let (train_imps, st) = parse_behaviors_tsv(&train_path)?;
    let _ = writeln!(
        report,
        "{}: {} lines, {} malformed, {} bad candidates, {} empty histories",
        train_path.display(),
        st.lines,
        st.malformed,
        st.bad_candidates,
        st.empty_history
    );
    let valid_imps = match &valid_path {
        Some(p) => {
            let (v, st) = parse_behaviors_tsv(p)?;
            let _ = writeln!(
                report,
                "{}: {} lines, {} malformed, {} bad candidates, {} empty histories",
                p.display(),
                st.lines,
                st.malformed,
                st.bad_candidates,
                st.empty_history
            );
            v
        }
        None => Vec::new(),
    };
    let (ds, vocabs, stats) = data::prepare(&catalog, &train_imps, &valid_imps, a.title_len, a.entity_len)?;
    ds.save(&a.out)?;
    vocabs.write(&a.out)?;
    let sizes = vocabs.sizes();
    let _ = writeln!(report, "articles      {}", stats.articles);
    let _ = writeln!(report, "impressions   {} train, {} valid", stats.train_impressions, stats.valid_impressions);
    let _ = writeln!(report, "positives     {}", stats.positives);
    let _ = writeln!(report, "empty history {}", stats.empty_histories);
    let _ = writeln!(
        report,
        "unresolved    {} history ids, {} candidates, {} impressions dropped",
        stats.encode.unresolved_history, stats.encode.unresolved_candidates, stats.encode.dropped_impressions
    );
    let _ = writeln!(
        report,
        "vocabulary    {} words, {} entities, {} topics",
        sizes.words, sizes.entities, sizes.topics
    );
    Ok(report)
}

fn load_data(dir: &Path) -> Result<(EncodedDataset, Vocabs)> {
    Ok((EncodedDataset::load(dir)?, Vocabs::read(dir)?))
}

pub fn cmd_train(a: &TrainArgs, threads: Option<usize>) -> Result<String> {
    let mut cfg = a.cfg.resolve(threads)?;
    let (data, vocabs) = load_data(&a.data)?;
    if (cfg.model.title_len, cfg.model.entity_len) != (data.title_len, data.entity_len) {
        log::info!(
            "using the dataset's title/entity lengths {}/{}",
            data.title_len,
            data.entity_len
        );
        cfg.model.title_len = data.title_len;
        cfg.model.entity_len = data.entity_len;
    }
    create_dir(&a.out)?;
    write_file(&a.out.join("config.txt"), &cfg.to_kv())?;
    let mut model = CaumModel::new(cfg.model.clone(), vocabs.sizes(), cfg.train.seed)?;
    let opts = TrainOptions {
        out_dir: Some(a.out.clone()),
        eval_train: a.eval_train,
        eval_valid: true,
    };
    let report = train(&mut model, &data, &cfg.train, &opts)?;
    model.save(&a.out.join("model.ckpt"))?;

    let mut csv = String::from("epoch,mean_loss,train_auc,valid_auc,valid_mrr,valid_ndcg5,valid_ndcg10\n");
    let mut out = String::new();
    for e in &report.epochs {
        let f = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.6}"));
        let v = e.valid.as_ref();
        let _ = writeln!(
            csv,
            "{},{:.6},{},{},{},{},{}",
            e.epoch,
            e.mean_loss,
            f(e.train.as_ref().map(|r| r.auc.mean)),
            f(v.map(|r| r.auc.mean)),
            f(v.map(|r| r.mrr.mean)),
            f(v.map(|r| r.ndcg5.mean)),
            f(v.map(|r| r.ndcg10.mean))
        );
        let _ = writeln!(
            out,
            "epoch {:>3}  loss {:.5}{}{}",
            e.epoch,
            e.mean_loss,
            e.train.as_ref().map(|r| format!("  train AUC {:.4}", r.auc.mean)).unwrap_or_default(),
            v.map(|r| format!("  valid AUC {:.4}", r.auc.mean)).unwrap_or_default()
        );
    }
    write_file(&a.out.join("epochs.csv"), &csv)?;
    let s = report.skipped;
    let _ = writeln!(
        out,
        "skipped impressions: {} without positives, {} without negatives, {} with empty history",
        s.no_positive, s.no_negative, s.empty_history
    );
    let _ = writeln!(out, "wrote {}", a.out.display());
    Ok(out)
}

fn model_config(checkpoint: &Path, explicit: Option<&Path>) -> Result<RunConfig> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => checkpoint
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("config.txt"),
    };
    let cfg = RunConfig::from_file(&path)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<String> {
    let cfg = model_config(&a.checkpoint, a.config.as_deref())?;
    let model = CaumModel::load(&a.checkpoint, cfg.model)?;
    let data = EncodedDataset::load(&a.data)?;
    let vecs = model.news_vectors(&data.news)?;
    let imps = match a.split {
        Split::Train => &data.train,
        Split::Valid => &data.valid,
    };
    if imps.is_empty() {
        return Err(Error::Contract(format!("the {:?} split is empty", a.split).to_lowercase()));
    }
    let report = evaluate_model(&model, &vecs, imps)?;
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_file(&dir.join("metrics.json"), &report.to_json())?;
        write_file(&dir.join("metrics.txt"), &report.to_table())?;
    }
    Ok(match a.format {
        ReportFormat::Table => report.to_table(),
        ReportFormat::Json => report.to_json() + "\n",
        ReportFormat::Both => format!("{}\n{}\n", report.to_table(), report.to_json()),
    })
}

fn id_list(arg: &str) -> Result<Vec<String>> {
    let path = Path::new(arg);
    let text = if path.is_file() {
        std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?
    } else {
        arg.to_string()
    };
    Ok(text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect())
}

/// Candidates ranked best first: `(news id, score)`.
pub fn rank_candidates(a: &ScoreArgs) -> Result<Vec<(String, f64)>> {
    let cfg = model_config(&a.checkpoint, a.config.as_deref())?;
    let model = CaumModel::load(&a.checkpoint, cfg.model)?;
    let data = EncodedDataset::load(&a.data)?;
    let resolve = |ids: &[String]| -> Result<Vec<u32>> {
        ids.iter()
            .map(|id| {
                data.position(id)
                    .ok_or_else(|| Error::Contract(format!("unknown news id {id:?}")))
            })
            .collect()
    };
    let hist_ids = id_list(&a.user_history)?;
    let cand_ids = id_list(&a.candidates)?;
    if cand_ids.is_empty() {
        return Err(Error::Contract("no candidates given".into()));
    }
    let hist = resolve(&hist_ids)?;
    let cands = resolve(&cand_ids)?;

    let n = model.config.history_len;
    let slots = encode_history(&hist, n);
    let mut needed: Vec<u32> = slots.news.iter().flatten().copied().chain(cands.iter().copied()).collect();
    needed.sort_unstable();
    needed.dedup();
    let enc: Vec<_> = needed.iter().map(|&p| data.news[p as usize].clone()).collect();
    let vecs = model.news_vectors(&enc)?;
    let local = |p: u32| needed.binary_search(&p).expect("encoded above") as u32;
    let mut local_slots = slots.clone();
    local_slots.news.iter_mut().flatten().for_each(|p| *p = local(*p));

    let frozen = FrozenModel::<f64>::from_model(&model);
    let clicks = ClickMatrix::from_slots(&local_slots, &vecs, model.config.dim)?;
    let cand_vecs: Vec<Vec<f64>> = cands.iter().map(|&p| vecs[local(p) as usize].clone()).collect();
    let mut counter = OpCounter::new();
    let scores = if a.naive {
        frozen.naive_scores(&clicks, &cand_vecs, &mut counter)?
    } else {
        frozen.score(&clicks, &cand_vecs, &mut counter)?
    };
    let mut ranked: Vec<(String, f64)> = cand_ids.into_iter().zip(scores).collect();
    ranked.sort_by(|x, y| y.1.total_cmp(&x.1));
    Ok(ranked)
}

pub fn cmd_score(a: &ScoreArgs) -> Result<String> {
    let mut out = String::from("rank\tnews_id\tscore\n");
    for (i, (id, s)) in rank_candidates(a)?.iter().enumerate() {
        let _ = writeln!(out, "{}\t{}\t{:.9}", i + 1, id, s);
    }
    Ok(out)
}

pub fn cmd_bench(a: &BenchArgs) -> Result<String> {
    let mut grid = BenchGrid::parse(&a.grid, a.reps)?;
    grid.seed = a.seed;
    let report = bench::run(&grid)?;
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_file(&dir.join("bench.csv"), &report.to_csv())?;
    }
    Ok(format!("{}\n{}", report.to_csv(), report.summary()))
}

/// Run a parsed command line and return what should be printed.
pub fn run(cli: &Cli) -> Result<String> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("threads must be positive".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Prepare(a) => cmd_prepare(a),
        Command::Train(a) => cmd_train(a, cli.threads),
        Command::Eval(a) => cmd_eval(a),
        Command::Score(a) => cmd_score(a),
        Command::Bench(a) => cmd_bench(a),
    }
}
