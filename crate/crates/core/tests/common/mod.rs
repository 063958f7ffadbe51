//! Independent oracles shared by the integration tests: finite differences,
//! scalar-loop evaluations of the user encoder and the ranking metrics, and
//! small model and dataset builders.
#![allow(dead_code)]

use caum::autodiff::{Graph, ParamStore, Tensor, Var};
use caum::config::{Ablation, ModelConfig};
use caum::data::{EncodedDataset, EncodedImpression, EncodedNews, VocabSizes};
use caum::model::CaumModel;
use caum::train::{batch_loss, TrainPair};
use caum::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, uniform(rng, rows * cols, 1.0)).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---- finite differences -----------------------------------------------------

/// Central difference of `f` at every coordinate of `x`. `points` is 2 or 5.
pub fn numeric_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64, points: usize) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let x0 = x[i];
            let mut at = |dx: f64| {
                x[i] = x0 + dx;
                let v = f(&x);
                x[i] = x0;
                v
            };
            match points {
                2 => (at(eps) - at(-eps)) / (2.0 * eps),
                5 => (-at(2.0 * eps) + 8.0 * at(eps) - 8.0 * at(-eps) + at(-2.0 * eps)) / (12.0 * eps),
                _ => panic!("unsupported stencil"),
            }
        })
        .collect()
}

/// Worst relative error over coordinates with a non-negligible analytic
/// gradient, and worst absolute numeric value over the negligible ones.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheck {
    pub max_rel: f64,
    pub max_abs_on_zero: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn compare(&mut self, analytic: &[f64], numeric: &[f64]) {
        for (&a, &n) in analytic.iter().zip(numeric) {
            if a.abs() > 1e-8 {
                self.max_rel = self.max_rel.max((a - n).abs() / a.abs().max(n.abs()));
                self.checked += 1;
            } else {
                self.max_abs_on_zero = self.max_abs_on_zero.max(n.abs());
            }
        }
    }

    pub fn merge(&mut self, other: GradCheck) {
        self.max_rel = self.max_rel.max(other.max_rel);
        self.max_abs_on_zero = self.max_abs_on_zero.max(other.max_abs_on_zero);
        self.checked += other.checked;
    }
}

/// Check `build` against finite differences. The scalar objective is
/// `Σ out ⊙ R` for a fixed random `R`, so every output coordinate matters.
pub fn check_op(inputs: &[Tensor], seed: u64, build: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> GradCheck {
    let objective = |g: &mut Graph, vars: &[Var]| -> Var {
        let out = build(g, vars).unwrap();
        let (r, c) = g.dims(out);
        let weights = uniform(&mut rng(seed), r * c, 1.0);
        let w = g.constant_matrix(r, c, weights);
        let prod = g.mul(out, w).unwrap();
        g.sum(prod)
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = objective(&mut g, &vars);
    g.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad(v).unwrap().to_vec()).collect();

    let mut report = GradCheck::default();
    for (k, t) in inputs.iter().enumerate() {
        let numeric = numeric_grad(
            |x| {
                let mut g = Graph::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, u)| {
                        let t = if j == k { Tensor::new(u.shape().to_vec(), x.to_vec()).unwrap() } else { u.clone() };
                        g.leaf(t, true)
                    })
                    .collect();
                let loss = objective(&mut g, &vars);
                g.scalar(loss)
            },
            t.data(),
            1e-6,
            2,
        );
        report.compare(&analytic[k], &numeric);
    }
    report
}

// ---- toy model and data ---------------------------------------------------------

pub fn toy_config() -> ModelConfig {
    ModelConfig {
        dim: 8,
        heads: 2,
        head_dim: 4,
        window_half: 1,
        history_len: 4,
        title_len: 5,
        entity_len: 3,
        phi_hidden: 6,
        pool_hidden: 5,
        cnn_bias: true,
        ablation: Ablation::FULL,
    }
}

pub const TOY_SIZES: VocabSizes = VocabSizes {
    words: 12,
    entities: 7,
    topics: 4,
};

/// Ids are drawn from `1..size`, so every news item has some title tokens.
pub fn random_news(rng: &mut impl Rng, sizes: &VocabSizes, title_len: usize, entity_len: usize) -> EncodedNews {
    let nt = rng.random_range(1..=title_len);
    let ne = rng.random_range(0..=entity_len);
    let title: Vec<u32> = (0..nt).map(|_| rng.random_range(1..sizes.words as u32)).collect();
    let ents: Vec<u32> = (0..ne).map(|_| rng.random_range(1..sizes.entities as u32)).collect();
    EncodedNews::from_ids(&title, &ents, rng.random_range(1..sizes.topics as u32), title_len, entity_len)
}

pub fn dataset(news: Vec<EncodedNews>, train: Vec<EncodedImpression>, title_len: usize, entity_len: usize) -> EncodedDataset {
    EncodedDataset {
        news_ids: (0..news.len()).map(|i| format!("N{i}")).collect(),
        news,
        train,
        valid: Vec::new(),
        title_len,
        entity_len,
    }
}

pub fn impression(id: u32, history: Vec<u32>, candidates: Vec<u32>, labels: Vec<u8>) -> EncodedImpression {
    EncodedImpression {
        impression_id: id,
        history,
        candidates,
        labels,
    }
}

/// Forward-only BPR loss of `pairs` under the model's current parameters.
pub fn loss_value(model: &CaumModel, data: &EncodedDataset, pairs: &[TrainPair]) -> f64 {
    let mut g = Graph::with_params(&model.params);
    let loss = batch_loss(&mut g, model, data, &data.train, pairs).unwrap();
    g.scalar(loss)
}

// ---- scalar-loop user encoder -----------------------------------------------------

fn param<'a>(store: &'a ParamStore, name: &str) -> (&'a [f64], usize) {
    let e = store.get(name).unwrap_or_else(|| panic!("missing parameter {name}"));
    let cols = *e.value.shape().last().unwrap();
    (e.value.data(), cols)
}

/// `W x` for a row-major `W` with `x.len()` columns.
fn apply(w: &[f64], cols: usize, x: &[f64]) -> Vec<f64> {
    assert_eq!(cols, x.len());
    w.chunks(cols).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn masked_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&x, _)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&x, &m)| if m { (x - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// The user vector evaluated term by term from the model's named parameters:
/// candidate-aware click attention aggregating raw click vectors, the window
/// filter with ReLU, the fusion projection and the relevance-weighted pooling.
pub fn oracle_user(model: &CaumModel, clicks: &[Vec<f64>], mask: &[bool], cand: &[f64]) -> Vec<f64> {
    let cfg = &model.config;
    let s = &model.params;
    let d = cfg.dim;
    let n = clicks.len();
    let zero = vec![0.0; d];
    let ab = cfg.ablation;
    let pick = |on: bool| if on { cand } else { zero.as_slice() };

    let (q_u, _) = param(s, "user.q_u");
    let (q_c, _) = param(s, "user.q_c");
    let queries: Vec<Vec<f64>> = clicks.iter().map(|c| apply(q_u, d, c)).collect();
    let q_cand = apply(q_c, d, pick(ab.candi_self_att));
    let mut attended = vec![Vec::new(); n];
    for k in 0..cfg.heads {
        let (w_r, _) = param(s, &format!("user.w_r.{k}"));
        let (w_o, _) = param(s, &format!("user.w_o.{k}"));
        for i in 0..n {
            let logits: Vec<f64> = (0..n)
                .map(|j| {
                    let v = apply(w_r, d, &clicks[j]);
                    dot(&queries[i], &v) + dot(&q_cand, &v)
                })
                .collect();
            let gamma = masked_softmax(&logits, mask);
            let mut agg = vec![0.0; d];
            for j in 0..n {
                for t in 0..d {
                    agg[t] += gamma[j] * clicks[j][t];
                }
            }
            attended[i].extend(apply(w_o, d, &agg));
        }
    }

    let (w_c, wc_cols) = param(s, "user.w_c");
    let h = cfg.window_half as isize;
    let local: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut input = Vec::with_capacity(wc_cols);
            for o in -h..=h {
                let j = i as isize + o;
                if (0..n as isize).contains(&j) {
                    input.extend_from_slice(&clicks[j as usize]);
                } else {
                    input.extend_from_slice(&zero);
                }
            }
            input.extend_from_slice(pick(ab.candi_cnn));
            let mut out = apply(w_c, wc_cols, &input);
            if let Some(e) = s.get("user.b_c") {
                out.iter_mut().zip(e.value.data()).for_each(|(x, b)| *x += b);
            }
            out.into_iter().map(|x| x.max(0.0)).collect()
        })
        .collect();

    let (p_m, _) = param(s, "user.p_m");
    let fused: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let both: Vec<f64> = local[i].iter().chain(&attended[i]).copied().collect();
            apply(p_m, 2 * d, &both)
        })
        .collect();

    let (w1, _) = param(s, "user.phi.w1");
    let (b1, _) = param(s, "user.phi.b1");
    let (w2, hidden) = param(s, "user.phi.w2");
    let (b2, _) = param(s, "user.phi.b2");
    let logits: Vec<f64> = fused
        .iter()
        .map(|m| {
            let input: Vec<f64> = m.iter().chain(pick(ab.candi_att)).copied().collect();
            let z: Vec<f64> = apply(w1, 2 * d, &input).iter().zip(b1).map(|(x, b)| (x + b).tanh()).collect();
            assert_eq!(z.len(), hidden);
            dot(w2, &z) + b2[0]
        })
        .collect();
    let alpha = masked_softmax(&logits, mask);
    let mut u = vec![0.0; d];
    for i in 0..n {
        for t in 0..d {
            u[t] += alpha[i] * fused[i][t];
        }
    }
    u
}

/// User vector from the tape encoder, for comparison with the oracle.
pub fn tape_user(model: &CaumModel, clicks: &[Vec<f64>], mask: &[bool], cand: &[f64]) -> Vec<f64> {
    use caum::model::user::{encode_user, ClickContext};
    let d = model.config.dim;
    let mut g = Graph::with_params(&model.params);
    let flat: Vec<f64> = clicks.concat();
    let c = g.constant_matrix(clicks.len(), d, flat);
    let n_c = g.constant_matrix(1, d, cand.to_vec());
    let ctx = ClickContext::new(&mut g, &model.ids.user, &model.config, c, mask).unwrap();
    let u = encode_user(&mut g, &model.ids.user, &model.config, &ctx, n_c).unwrap();
    g.value(u).to_vec()
}

// ---- scalar-loop metrics ---------------------------------------------------------

/// Count of correctly ordered (positive, negative) pairs, ties one half.
pub fn brute_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                pairs += 1;
                total += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    (pairs > 0).then(|| total / pairs as f64)
}

/// 1-based rank of candidate `i`: the number of candidates ordered before it
/// (higher score, or equal score and lower index), plus one.
pub fn rank_of(scores: &[f64], i: usize) -> usize {
    1 + (0..scores.len())
        .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
        .count()
}

pub fn loop_mrr(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    if pos.is_empty() {
        return None;
    }
    Some(pos.iter().map(|&i| 1.0 / rank_of(scores, i) as f64).sum::<f64>() / pos.len() as f64)
}

pub fn loop_ndcg(scores: &[f64], labels: &[u8], k: usize) -> Option<f64> {
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    if pos.is_empty() {
        return None;
    }
    let mut dcg = 0.0;
    for &i in &pos {
        let r = rank_of(scores, i);
        if r <= k {
            dcg += (2f64.powi(1) - 1.0) / ((r + 1) as f64).log2();
        }
    }
    let mut ideal = 0.0;
    for r in 1..=pos.len().min(k) {
        ideal += 1.0 / ((r + 1) as f64).log2();
    }
    Some(dcg / ideal)
}
