//! Candidate-aware user encoder on the autodiff tape.
//!
//! Row-vector convention throughout: clicks are the rows of `C` (`N × d`),
//! so a projection `W c_i` becomes `C Wᵀ`.

use super::UserParams;
use crate::autodiff::{Graph, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};

/// Candidate-independent tensors for one click history, built once and
/// shared by every candidate scored against it.
#[derive(Debug, Clone)]
pub struct ClickContext {
    pub clicks: Var,
    pub mask: Vec<bool>,
    /// `C Q_uᵀ`.
    pub queries: Var,
    /// Per head `C W_kᵀ`.
    pub values: Vec<Var>,
    /// Per head click-click scores `queries · valuesᵀ`.
    pub scores: Vec<Var>,
    /// Per head `C W_okᵀ`.
    pub outputs: Vec<Var>,
    /// `[c_{i-h}; …; c_{i+h}]` per row, zero beyond the ends.
    pub windows: Var,
}

impl ClickContext {
    /// `clicks` is `N × d` with zero rows where `mask` is false.
    pub fn new(g: &mut Graph, p: &UserParams, cfg: &ModelConfig, clicks: Var, mask: &[bool]) -> Result<Self> {
        let (n, d) = g.dims(clicks);
        if d != cfg.dim || mask.len() != n {
            return Err(Error::shape("click matrix", &[n, d], &[mask.len(), cfg.dim]));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::DegenerateMask("click history"));
        }
        let q_u = g.param(p.q_u);
        let queries = g.matmul_nt(clicks, q_u)?;
        let mut values = Vec::with_capacity(cfg.heads);
        let mut scores = Vec::with_capacity(cfg.heads);
        let mut outputs = Vec::with_capacity(cfg.heads);
        for k in 0..cfg.heads {
            let w = g.param(p.w_r[k]);
            let v = g.matmul_nt(clicks, w)?;
            scores.push(g.matmul_nt(queries, v)?);
            values.push(v);
            let wo = g.param(p.w_o[k]);
            outputs.push(g.matmul_nt(clicks, wo)?);
        }
        let h = cfg.window_half as isize;
        let shifted: Vec<Var> = (-h..=h).map(|o| g.shift_rows(clicks, o)).collect();
        let windows = g.concat(&shifted, 1)?;
        Ok(Self {
            clicks,
            mask: mask.to_vec(),
            queries,
            values,
            scores,
            outputs,
            windows,
        })
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }
}

/// Self-attention over clicks with the candidate term added to every logit.
/// `None` drops the candidate term, giving plain self-attention.
pub fn self_att(g: &mut Graph, p: &UserParams, cfg: &ModelConfig, ctx: &ClickContext, cand: Option<Var>) -> Result<Var> {
    let q_c = match cand {
        Some(n_c) => {
            let w = g.param(p.q_c);
            Some(g.matmul_nt(n_c, w)?)
        }
        None => None,
    };
    let mut heads = Vec::with_capacity(cfg.heads);
    for k in 0..cfg.heads {
        let logits = match q_c {
            Some(q) => {
                let t = g.matmul_nt(q, ctx.values[k])?;
                g.add(ctx.scores[k], t)?
            }
            None => ctx.scores[k],
        };
        let gamma = g.softmax(logits, Some(&ctx.mask))?;
        heads.push(g.matmul(gamma, ctx.outputs[k])?);
    }
    g.concat(&heads, 1)
}

fn candidate_or_zero(g: &mut Graph, cfg: &ModelConfig, cand: Option<Var>) -> Var {
    cand.unwrap_or_else(|| g.constant_matrix(1, cfg.dim, vec![0.0; cfg.dim]))
}

/// Windowed filter over clicks concatenated with the candidate, then ReLU.
pub fn cnn(g: &mut Graph, p: &UserParams, cfg: &ModelConfig, ctx: &ClickContext, cand: Option<Var>) -> Result<Var> {
    let n_c = candidate_or_zero(g, cfg, cand);
    let rows = g.broadcast_rows(n_c, ctx.len())?;
    let input = g.concat(&[ctx.windows, rows], 1)?;
    let w = g.param(p.w_c);
    let mut s = g.matmul_nt(input, w)?;
    if let Some(b) = p.b_c {
        let b = g.param(b);
        s = g.add(s, b)?;
    }
    Ok(g.relu(s))
}

/// `[S; L] P_mᵀ`.
pub fn fuse(g: &mut Graph, p: &UserParams, local: Var, attended: Var) -> Result<Var> {
    let both = g.concat(&[local, attended], 1)?;
    let pm = g.param(p.p_m);
    g.matmul_nt(both, pm)
}

/// Relevance logits of each fused click for the candidate, as a `1 × N` row.
pub fn relevance(g: &mut Graph, p: &UserParams, cfg: &ModelConfig, fused: Var, cand: Option<Var>) -> Result<Var> {
    let n_c = candidate_or_zero(g, cfg, cand);
    let rows = g.broadcast_rows(n_c, g.dims(fused).0)?;
    let input = g.concat(&[fused, rows], 1)?;
    let (w1, b1, w2, b2) = (g.param(p.phi_w1), g.param(p.phi_b1), g.param(p.phi_w2), g.param(p.phi_b2));
    let hidden = g.matmul_nt(input, w1)?;
    let hidden = g.add(hidden, b1)?;
    let hidden = g.tanh(hidden);
    let logits = g.matmul_nt(hidden, w2)?;
    let logits = g.add(logits, b2)?;
    Ok(g.transpose(logits))
}

/// Attention pooling of fused clicks: `u = Σ α_i m_i`.
pub fn candi_att(
    g: &mut Graph,
    p: &UserParams,
    cfg: &ModelConfig,
    fused: Var,
    cand: Option<Var>,
    mask: &[bool],
) -> Result<Var> {
    let logits = relevance(g, p, cfg, fused, cand)?;
    let alpha = g.softmax(logits, Some(mask))?;
    g.matmul(alpha, fused)
}

/// `1 × d` user vector for candidate `n_c`, honoring the ablation flags.
pub fn encode_user(g: &mut Graph, p: &UserParams, cfg: &ModelConfig, ctx: &ClickContext, n_c: Var) -> Result<Var> {
    let ab = cfg.ablation;
    let on = |flag: bool| flag.then_some(n_c);
    let attended = self_att(g, p, cfg, ctx, on(ab.candi_self_att))?;
    let local = cnn(g, p, cfg, ctx, on(ab.candi_cnn))?;
    let fused = fuse(g, p, local, attended)?;
    candi_att(g, p, cfg, fused, on(ab.candi_att), &ctx.mask)
}

/// `u · n_c` as a `1 × 1` node.
pub fn match_score(g: &mut Graph, u: Var, n_c: Var) -> Result<Var> {
    g.matmul_nt(u, n_c)
}
