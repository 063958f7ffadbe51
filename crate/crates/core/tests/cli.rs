use std::path::Path;
use std::process::{Command, Output};

use caum::config::{Ablation, ModelConfig, RunConfig, TrainConfig};
use caum::data::{EncodedDataset, EncodedImpression, EncodedNews, VocabSizes};
use caum::model::CaumModel;

fn caum(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_caum"))
        .args(args)
        .env("CAUM_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = caum(args);
    assert!(
        out.status.success(),
        "caum {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &["--preset", "desk", "--dim", "16", "--heads", "2", "--head-dim", "8", "--history-len", "10"];

fn train_small(data: &Path, out: &Path, seed: &str) -> String {
    let mut args = vec!["train", "--data", s(data), "--out", s(out), "--epochs", "1", "--seed", seed];
    args.extend_from_slice(SMALL);
    ok(&args)
}

#[test]
fn help_lists_subcommands_and_flags() {
    let top = ok(&["--help"]);
    for sub in ["prepare", "train", "eval", "score", "bench"] {
        assert!(top.contains(sub), "{sub} missing from\n{top}");
    }
    let train = ok(&["train", "--help"]);
    for flag in [
        "--config", "--preset", "--dim", "--heads", "--head-dim", "--window-half", "--history-len", "--epochs",
        "--lr", "--batch-size", "--seed", "--candi-self-att", "--candi-cnn", "--candi-att", "--threads",
    ] {
        assert!(train.contains(flag), "{flag} missing from\n{train}");
    }
}

#[test]
fn invalid_configuration_exits_nonzero_with_an_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = caum(&["train", "--data", s(dir.path()), "--out", s(&dir.path().join("o")), "--heads", "7"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:"), "{err}");
    assert!(err.contains("heads must divide dim"), "{err}");

    let out = caum(&["train", "--data", "x", "--out", "y", "--candi-att", "maybe"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn prepare_train_score_pipeline() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let report = ok(&["prepare", "--synthetic", "--seed", "3", "--out", s(&data)]);
    assert!(report.contains("articles      500"), "{report}");
    assert!(data.join("dataset.bin").is_file() && data.join("words.txt").is_file());

    // same seed, same loss log and final checkpoint
    let a = root.path().join("a");
    let b = root.path().join("b");
    train_small(&data, &a, "7");
    train_small(&data, &b, "7");
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&a.join("loss.csv")), read(&b.join("loss.csv")));
    assert_eq!(read(&a.join("model.ckpt")), read(&b.join("model.ckpt")));
    assert!(String::from_utf8(read(&a.join("loss.csv"))).unwrap().starts_with("epoch,step,loss\n"));

    let eval = ok(&["eval", "--checkpoint", s(&a.join("model.ckpt")), "--data", s(&data), "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(eval.trim()).unwrap();
    assert!(v["auc"]["mean"].as_f64().unwrap() > 0.0);

    let ids = std::fs::read_to_string(data.join("news_ids.txt")).unwrap();
    let ids: Vec<&str> = ids.lines().collect();
    let history = ids[..12].join(",");
    let cands = ids[100..110].join(" ");
    let ckpt = a.join("model.ckpt");
    let base = ["score", "--checkpoint", s(&ckpt), "--data", s(&data), "--user-history", &history, "--candidates", &cands];
    let amortized = ok(&base);
    let mut naive_args = base.to_vec();
    naive_args.push("--naive");
    let naive = ok(&naive_args);
    let rows = |text: &str| -> Vec<(String, f64)> {
        text.lines()
            .skip(1)
            .map(|l| {
                let f: Vec<&str> = l.split('\t').collect();
                (f[1].to_string(), f[2].parse().unwrap())
            })
            .collect()
    };
    let (ra, rn) = (rows(&amortized), rows(&naive));
    assert_eq!(ra.len(), 10);
    assert_eq!(ra.iter().map(|r| &r.0).collect::<Vec<_>>(), rn.iter().map(|r| &r.0).collect::<Vec<_>>());
    for (x, y) in ra.iter().zip(&rn) {
        assert!((x.1 - y.1).abs() < 1e-8);
    }

    let out = caum(&["score", "--checkpoint", s(&ckpt), "--data", s(&data), "--user-history", "NOPE", "--candidates", ids[0]]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown news id"));
}

#[test]
fn bench_writes_its_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["bench", "--grid", "N=6,M=1:4,d=16", "--reps", "2", "--out", s(dir.path())]);
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("variant,N,M,d,reps,median_ns,mult_count"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().any(|r| r.starts_with("naive,6,4,16,2,")));
    assert!(rows.iter().any(|r| r.starts_with("amortized,6,4,16,2,")));
    assert!(out.contains("variant,N,M,d"));
}

/// A model whose score is the share of clicked articles with the
/// candidate's topic: news vectors are one-hot topics, the filter and the
/// fusion pass clicks through and the pooling is uniform.
fn topic_matching_model(topics: usize) -> CaumModel {
    let cfg = ModelConfig {
        dim: 8,
        heads: 2,
        head_dim: 4,
        window_half: 0,
        history_len: 6,
        title_len: 4,
        entity_len: 2,
        phi_hidden: 3,
        pool_hidden: 3,
        cnn_bias: true,
        ablation: Ablation::FULL,
    };
    let sizes = VocabSizes {
        words: 9,
        entities: 5,
        topics,
    };
    let mut m = CaumModel::new(cfg.clone(), sizes, 1).unwrap();
    let d = cfg.dim;
    let ids: Vec<_> = m.params.iter().map(|(id, e)| (id, e.name.clone())).collect();
    for (id, name) in ids {
        let v = m.params.value_mut(id).data_mut();
        if name.contains(".wv.") || name.ends_with(".empty") || name == "user.phi.w1" || name == "user.b_c" {
            v.fill(0.0);
        } else if name == "news.topic_emb" {
            v.fill(0.0);
            for t in 0..topics {
                v[t * d + t] = 1.0;
            }
        } else if name == "user.w_c" || name == "user.p_m" {
            // d × 2d selecting the first block
            v.fill(0.0);
            for i in 0..d {
                v[i * 2 * d + i] = 1.0;
            }
        }
    }
    m
}

#[test]
fn eval_of_a_perfect_scorer_reports_ones() {
    let topics = 5;
    let model = topic_matching_model(topics);
    // articles 4t..4t+3 belong to topic t+1
    let news: Vec<EncodedNews> = (0..16).map(|i| EncodedNews::from_ids(&[1 + (i % 8) as u32], &[1], 1 + i as u32 / 4, 4, 2)).collect();
    let imp = |id: u32, t: u32, other: u32| EncodedImpression {
        impression_id: id,
        history: vec![4 * t, 4 * t + 1, 4 * t + 2],
        candidates: vec![4 * other, 4 * t + 3, 4 * other + 1, 4 * other + 2],
        labels: vec![0, 1, 0, 0],
    };
    let valid = vec![imp(1, 0, 1), imp(2, 1, 2), imp(3, 2, 3), imp(4, 3, 0), imp(5, 1, 0)];
    let data = EncodedDataset {
        news_ids: (0..16).map(|i| format!("N{i}")).collect(),
        news,
        train: valid.clone(),
        valid,
        title_len: 4,
        entity_len: 2,
    };
    let dir = tempfile::tempdir().unwrap();
    data.save(dir.path()).unwrap();
    let run_dir = dir.path().join("run");
    std::fs::create_dir(&run_dir).unwrap();
    let cfg = RunConfig {
        model: model.config.clone(),
        train: TrainConfig::default(),
        threads: None,
    };
    std::fs::write(run_dir.join("config.txt"), cfg.to_kv()).unwrap();
    model.save(&run_dir.join("model.ckpt")).unwrap();

    let out_dir = dir.path().join("metrics");
    let json = ok(&[
        "eval", "--checkpoint", s(&run_dir.join("model.ckpt")), "--data", s(dir.path()), "--format", "json", "--out",
        s(&out_dir),
    ]);
    let v: serde_json::Value = serde_json::from_str(json.trim()).unwrap();
    for key in ["auc", "mrr", "ndcg@5", "ndcg@10"] {
        assert_eq!(v[key]["mean"].as_f64(), Some(1.0), "{key}: {json}");
        assert_eq!(v[key]["n"].as_u64(), Some(5));
    }
    assert!(out_dir.join("metrics.json").is_file());
    let table = std::fs::read_to_string(out_dir.join("metrics.txt")).unwrap();
    assert!(table.contains("AUC"), "{table}");
}
