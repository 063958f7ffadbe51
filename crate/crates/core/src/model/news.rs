//! News encoder: title and entity self-attention with additive pooling, plus
//! a topic embedding. The three parts are summed.

use super::{AttnPoolParams, NewsParams};
use crate::autodiff::{Graph, Var};
use crate::config::ModelConfig;
use crate::data::EncodedNews;
use crate::error::{Error, Result};

/// Multi-head self-attention over the rows of `x` (`L × d`) followed by
/// additive pooling to a `1 × d` row.
pub fn attend_and_pool(g: &mut Graph, p: &AttnPoolParams, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let scale = 1.0 / (cfg.head_dim as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.heads);
    for k in 0..cfg.heads {
        let (wq, wk, wv) = (g.param(p.wq[k]), g.param(p.wk[k]), g.param(p.wv[k]));
        let q = g.matmul_nt(x, wq)?;
        let key = g.matmul_nt(x, wk)?;
        let v = g.matmul_nt(x, wv)?;
        let logits = g.matmul_nt(q, key)?;
        let logits = g.scale(logits, scale);
        let att = g.softmax(logits, None)?;
        heads.push(g.matmul(att, v)?);
    }
    let h = g.concat(&heads, 1)?;
    let (w, b, q) = (g.param(p.pool_w), g.param(p.pool_b), g.param(p.pool_q));
    let hidden = g.matmul_nt(h, w)?;
    let hidden = g.add(hidden, b)?;
    let hidden = g.tanh(hidden);
    let logits = g.matmul_nt(hidden, q)?;
    let logits = g.transpose(logits);
    let alpha = g.softmax(logits, None)?;
    g.matmul(alpha, h)
}

/// Ids at unmasked positions. Attention restricted to these is exactly the
/// masked computation, since masked positions get zero weight.
fn unmasked(ids: &[u32], mask: &[bool]) -> Vec<usize> {
    ids.iter().zip(mask).filter(|(_, &m)| m).map(|(&i, _)| i as usize).collect()
}

fn encode_sequence(
    g: &mut Graph,
    table: crate::autodiff::ParamId,
    p: &AttnPoolParams,
    cfg: &ModelConfig,
    ids: &[u32],
    mask: &[bool],
    what: &'static str,
) -> Result<Var> {
    let keep = unmasked(ids, mask);
    if keep.is_empty() {
        return Err(Error::DegenerateMask(what));
    }
    let t = g.param(table);
    let x = g.embedding_lookup(t, &keep)?;
    attend_and_pool(g, p, cfg, x)
}

/// Title component. Fails with a degenerate-mask error when no token is
/// unmasked.
pub fn encode_title(g: &mut Graph, p: &NewsParams, cfg: &ModelConfig, n: &EncodedNews) -> Result<Var> {
    encode_sequence(g, p.word_emb, &p.title, cfg, &n.title_ids, &n.title_mask, "title")
}

pub fn encode_entities(g: &mut Graph, p: &NewsParams, cfg: &ModelConfig, n: &EncodedNews) -> Result<Var> {
    encode_sequence(g, p.entity_emb, &p.entity, cfg, &n.entity_ids, &n.entity_mask, "entity list")
}

pub fn encode_topic(g: &mut Graph, p: &NewsParams, n: &EncodedNews) -> Result<Var> {
    let t = g.param(p.topic_emb);
    g.embedding_lookup(t, &[n.topic_id as usize])
}

/// `1 × d` news vector. Empty titles and entity lists fall back to their
/// learned substitute vectors.
pub fn encode_news(g: &mut Graph, p: &NewsParams, cfg: &ModelConfig, n: &EncodedNews) -> Result<Var> {
    let title = match encode_title(g, p, cfg, n) {
        Err(Error::DegenerateMask(_)) => g.param(p.title_empty),
        r => r?,
    };
    let ents = match encode_entities(g, p, cfg, n) {
        Err(Error::DegenerateMask(_)) => g.param(p.entity_empty),
        r => r?,
    };
    let topic = encode_topic(g, p, n)?;
    let sum = g.add(title, ents)?;
    g.add(sum, topic)
}
