//! Inference-time user encoding and candidate scoring over frozen
//! parameters, in `f32` or `f64`.
//!
//! Two paths compute the same scores. The naive path encodes the user from
//! scratch for every candidate, exactly as written: the window filter sees
//! the concatenation of clicks and candidate, and the relevance MLP sees the
//! concatenation of fused clicks and candidate. The amortized path caches
//! every candidate-independent tensor once per user and splits the two
//! concatenated weight matrices column-wise, so each candidate only pays for
//! the candidate-dependent blocks.

pub mod bench;

use crate::autodiff::{ParamId, ParamStore};
use crate::config::{Ablation, ModelConfig};
use crate::data::ClickSlots;
use crate::error::{Error, Result};
use crate::kernels::{dot, masked_softmax_in_place, Mat, OpCounter, Phase, Real};
use crate::model::CaumModel;

/// `N × d` click vectors with zero rows at masked slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ClickMatrix<T> {
    pub vectors: Mat<T>,
    pub mask: Vec<bool>,
}

impl<T: Real> ClickMatrix<T> {
    pub fn new(vectors: Mat<T>, mask: Vec<bool>) -> Result<Self> {
        if vectors.rows != mask.len() {
            return Err(Error::shape("click matrix", &[vectors.rows, vectors.cols], &[mask.len()]));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::DegenerateMask("click history"));
        }
        let mut vectors = vectors;
        for (i, &m) in mask.iter().enumerate() {
            if !m {
                vectors.row_mut(i).iter_mut().for_each(|x| *x = T::zero());
            }
        }
        Ok(Self { vectors, mask })
    }

    /// Gather rows of `news` (indexed by catalog position) into slot order.
    pub fn from_slots(slots: &ClickSlots, news: &[Vec<f64>], dim: usize) -> Result<Self> {
        let mut m = Mat::zeros(slots.len(), dim);
        for (i, s) in slots.news.iter().enumerate() {
            if let Some(p) = s {
                let v = news.get(*p as usize).ok_or(Error::Index {
                    id: *p as usize,
                    len: news.len(),
                })?;
                for (x, &y) in m.row_mut(i).iter_mut().zip(v) {
                    *x = T::from_f64(y);
                }
            }
        }
        Self::new(m, slots.mask.clone())
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }
}

/// Candidate-independent tensors for one user.
#[derive(Debug, Clone)]
pub struct UserPrecompute<T> {
    /// `C Q_uᵀ`, `N × d`.
    pub queries: Mat<T>,
    /// Per head `C W_kᵀ`, `N × d`.
    pub values: Vec<Mat<T>>,
    /// Per head click-click scores, `N × N`.
    pub scores: Vec<Mat<T>>,
    /// Per head `exp(scores - row max)`, zero at masked columns. A candidate
    /// only shifts each column, so its softmax is a reweighting of these.
    pub weights: Vec<Mat<T>>,
    /// Attended clicks when the self-attention ignores the candidate.
    pub attended: Option<Mat<T>>,
    /// Per head `C W_okᵀ`, `N × d_h`.
    pub outputs: Vec<Mat<T>>,
    /// Window part of the filter plus bias, `N × d`.
    pub context: Mat<T>,
    pub mask: Vec<bool>,
    /// Fingerprint of the parameters the cache was built from.
    pub version: u64,
}

fn mat<T: Real>(store: &ParamStore, id: ParamId) -> Mat<T> {
    let (r, c) = store.value(id).matrix_dims();
    Mat::from_f64(r, c, store.value(id).data())
}

fn vector<T: Real>(store: &ParamStore, id: ParamId) -> Vec<T> {
    store.value(id).data().iter().map(|&x| T::from_f64(x)).collect()
}

/// User-encoder parameters copied out of a [`CaumModel`].
#[derive(Debug, Clone)]
pub struct FrozenModel<T> {
    pub config: ModelConfig,
    q_u: Mat<T>,
    q_c: Mat<T>,
    w_r: Vec<Mat<T>>,
    w_o: Vec<Mat<T>>,
    w_c: Mat<T>,
    w_ctx: Mat<T>,
    w_cand: Mat<T>,
    b_c: Option<Vec<T>>,
    p_m: Mat<T>,
    phi_w1: Mat<T>,
    phi_w1_m: Mat<T>,
    phi_w1_c: Mat<T>,
    phi_b1: Vec<T>,
    phi_w2: Mat<T>,
    phi_b2: T,
    version: u64,
}

fn relu_in_place<T: Real>(m: &mut Mat<T>) {
    m.data.iter_mut().for_each(|x| *x = x.max(T::zero()));
}

impl<T: Real> FrozenModel<T> {
    pub fn from_model(model: &CaumModel) -> Self {
        let s = &model.params;
        let p = &model.ids.user;
        let cfg = &model.config;
        let d = cfg.dim;
        let w_c: Mat<T> = mat(s, p.w_c);
        let window = (2 * cfg.window_half + 1) * d;
        let phi_w1: Mat<T> = mat(s, p.phi_w1);
        Self {
            config: cfg.clone(),
            q_u: mat(s, p.q_u),
            q_c: mat(s, p.q_c),
            w_r: p.w_r.iter().map(|&id| mat(s, id)).collect(),
            w_o: p.w_o.iter().map(|&id| mat(s, id)).collect(),
            w_ctx: w_c.col_block(0, window),
            w_cand: w_c.col_block(window, d),
            w_c,
            b_c: p.b_c.map(|id| vector(s, id)),
            p_m: mat(s, p.p_m),
            phi_w1_m: phi_w1.col_block(0, d),
            phi_w1_c: phi_w1.col_block(d, d),
            phi_w1,
            phi_b1: vector(s, p.phi_b1),
            phi_w2: mat(s, p.phi_w2),
            phi_b2: T::from_f64(s.value(p.phi_b2).data()[0]),
            version: s.fingerprint(),
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    fn ablation(&self) -> Ablation {
        self.config.ablation
    }

    fn check_clicks(&self, clicks: &ClickMatrix<T>) -> Result<()> {
        if clicks.vectors.cols != self.config.dim {
            return Err(Error::shape(
                "click matrix",
                &[clicks.vectors.rows, clicks.vectors.cols],
                &[clicks.len(), self.config.dim],
            ));
        }
        Ok(())
    }

    fn check_candidate(&self, cand: &[T]) -> Result<()> {
        if cand.len() != self.config.dim {
            return Err(Error::shape("candidate", &[cand.len()], &[self.config.dim]));
        }
        Ok(())
    }

    /// `[c_{i-h}; …; c_{i+h}]` per row, zero beyond the ends.
    fn windows(&self, clicks: &Mat<T>) -> Mat<T> {
        let (n, d) = (clicks.rows, clicks.cols);
        let h = self.config.window_half as isize;
        let width = (2 * self.config.window_half + 1) * d;
        let mut out = Mat::zeros(n, width);
        for i in 0..n {
            for (w, o) in (-h..=h).enumerate() {
                let src = i as isize + o;
                if (0..n as isize).contains(&src) {
                    out.row_mut(i)[w * d..(w + 1) * d].copy_from_slice(clicks.row(src as usize));
                }
            }
        }
        out
    }

    fn softmax_rows(m: &mut Mat<T>, mask: &[bool]) -> Result<()> {
        for i in 0..m.rows {
            masked_softmax_in_place(m.row_mut(i), Some(mask)).ok_or(Error::DegenerateMask("click history"))?;
        }
        Ok(())
    }

    /// `exp(s - row max)` over unmasked columns.
    fn row_weights(scores: &Mat<T>, mask: &[bool]) -> Result<Mat<T>> {
        let mut w = scores.clone();
        for i in 0..w.rows {
            let row = w.row_mut(i);
            let max = row
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(&x, _)| x)
                .fold(T::neg_infinity(), T::max);
            if max == T::neg_infinity() {
                return Err(Error::DegenerateMask("click history"));
            }
            for (x, &m) in row.iter_mut().zip(mask) {
                *x = if m { (*x - max).exp() } else { T::zero() };
            }
        }
        Ok(w)
    }

    /// One head of candidate-aware attention with logits `scores + shift`
    /// per row. Rows whose normalizer underflows are redone directly.
    fn shifted_attention(pre: &UserPrecompute<T>, k: usize, shift: &[T], counter: &mut OpCounter) -> Result<Mat<T>> {
        let out = &pre.outputs[k];
        let dh = out.cols;
        let max = shift
            .iter()
            .zip(&pre.mask)
            .filter(|(_, &m)| m)
            .map(|(&x, _)| x)
            .fold(T::neg_infinity(), T::max);
        // [w ⊙ O | w], so one product yields numerators and normalizers
        let mut scaled = Mat::zeros(out.rows, dh + 1);
        for (j, (&m, &t)) in pre.mask.iter().zip(shift).enumerate() {
            if !m {
                continue;
            }
            let w = (t - max).exp();
            let row = scaled.row_mut(j);
            for (x, &o) in row[..dh].iter_mut().zip(out.row(j)) {
                *x = w * o;
            }
            row[dh] = w;
        }
        let raw = pre.weights[k].matmul(&scaled, counter);
        let floor = T::min_positive_value() / T::epsilon();
        let mut head = Mat::zeros(out.rows, dh);
        for i in 0..out.rows {
            let r = raw.row(i);
            let z = r[dh];
            if z >= floor {
                for (h, &x) in head.row_mut(i).iter_mut().zip(&r[..dh]) {
                    *h = x / z;
                }
            } else {
                let mut p: Vec<T> = pre.scores[k].row(i).iter().zip(shift).map(|(&s, &t)| s + t).collect();
                masked_softmax_in_place(&mut p, Some(&pre.mask)).ok_or(Error::DegenerateMask("click history"))?;
                let p = Mat::from_vec(1, p.len(), p);
                head.row_mut(i).copy_from_slice(&p.matmul(out, counter).data);
            }
        }
        Ok(head)
    }

    /// Relevance MLP output layer and pooling, shared by both paths.
    fn pool(&self, hidden: &mut Mat<T>, fused: &Mat<T>, mask: &[bool], counter: &mut OpCounter) -> Result<Vec<T>> {
        hidden.add_row_broadcast(&self.phi_b1);
        hidden.data.iter_mut().for_each(|x| *x = x.tanh());
        let mut logits = hidden.matmul_nt(&self.phi_w2, counter).data;
        logits.iter_mut().for_each(|x| *x += self.phi_b2);
        masked_softmax_in_place(&mut logits, Some(mask)).ok_or(Error::DegenerateMask("click history"))?;
        let alpha = Mat::from_vec(1, logits.len(), logits);
        Ok(alpha.matmul(fused, counter).data)
    }

    /// User vector for one candidate, recomputing everything.
    pub fn naive_user(&self, clicks: &ClickMatrix<T>, cand: &[T], counter: &mut OpCounter) -> Result<Vec<T>> {
        self.check_clicks(clicks)?;
        self.check_candidate(cand)?;
        let ab = self.ablation();
        let zero = vec![T::zero(); self.config.dim];
        let pick = |on: bool| if on { cand } else { zero.as_slice() };
        let c = &clicks.vectors;
        let n = c.rows;

        let queries = c.matmul_nt(&self.q_u, counter);
        let q_c = self.q_c.matvec(pick(ab.candi_self_att), counter);
        let mut heads = Vec::with_capacity(self.config.heads);
        for k in 0..self.config.heads {
            let v = c.matmul_nt(&self.w_r[k], counter);
            let mut logits = queries.matmul_nt(&v, counter);
            let t = v.matvec(&q_c, counter);
            logits.add_row_broadcast(&t);
            Self::softmax_rows(&mut logits, &clicks.mask)?;
            let out = c.matmul_nt(&self.w_o[k], counter);
            heads.push(logits.matmul(&out, counter));
        }
        let attended = Mat::hcat(&heads.iter().collect::<Vec<_>>());

        let cand_rows = Mat::from_vec(n, self.config.dim, pick(ab.candi_cnn).repeat(n));
        let input = Mat::hcat(&[&self.windows(c), &cand_rows]);
        let mut local = input.matmul_nt(&self.w_c, counter);
        if let Some(b) = &self.b_c {
            local.add_row_broadcast(b);
        }
        relu_in_place(&mut local);

        let fused = Mat::hcat(&[&local, &attended]).matmul_nt(&self.p_m, counter);
        let cand_rows = Mat::from_vec(n, self.config.dim, pick(ab.candi_att).repeat(n));
        let mut hidden = Mat::hcat(&[&fused, &cand_rows]).matmul_nt(&self.phi_w1, counter);
        self.pool(&mut hidden, &fused, &clicks.mask, counter)
    }

    pub fn naive_score(&self, clicks: &ClickMatrix<T>, cand: &[T], counter: &mut OpCounter) -> Result<T> {
        let u = self.naive_user(clicks, cand, counter)?;
        counter.add(u.len() as u64);
        Ok(dot(&u, cand))
    }

    /// Scores of every candidate via the naive path.
    pub fn naive_scores(&self, clicks: &ClickMatrix<T>, cands: &[Vec<T>], counter: &mut OpCounter) -> Result<Vec<T>> {
        counter.set_phase(Phase::PerCandidate);
        cands.iter().map(|c| self.naive_score(clicks, c, counter)).collect()
    }

    pub fn precompute(&self, clicks: &ClickMatrix<T>, counter: &mut OpCounter) -> Result<UserPrecompute<T>> {
        self.check_clicks(clicks)?;
        counter.set_phase(Phase::Precompute);
        let c = &clicks.vectors;
        let queries = c.matmul_nt(&self.q_u, counter);
        let mut values = Vec::with_capacity(self.config.heads);
        let mut scores = Vec::with_capacity(self.config.heads);
        let mut outputs = Vec::with_capacity(self.config.heads);
        for k in 0..self.config.heads {
            let v = c.matmul_nt(&self.w_r[k], counter);
            scores.push(queries.matmul_nt(&v, counter));
            values.push(v);
            outputs.push(c.matmul_nt(&self.w_o[k], counter));
        }
        let mut context = self.windows(c).matmul_nt(&self.w_ctx, counter);
        if let Some(b) = &self.b_c {
            context.add_row_broadcast(b);
        }
        let weights = scores.iter().map(|s| Self::row_weights(s, &clicks.mask)).collect::<Result<Vec<_>>>()?;
        let attended = if self.ablation().candi_self_att {
            None
        } else {
            let mut heads = Vec::with_capacity(self.config.heads);
            for (s, o) in scores.iter().zip(&outputs) {
                let mut p = s.clone();
                Self::softmax_rows(&mut p, &clicks.mask)?;
                heads.push(p.matmul(o, counter));
            }
            Some(Mat::hcat(&heads.iter().collect::<Vec<_>>()))
        };
        Ok(UserPrecompute {
            queries,
            values,
            scores,
            weights,
            attended,
            outputs,
            context,
            mask: clicks.mask.clone(),
            version: self.version,
        })
    }

    fn check_fresh(&self, pre: &UserPrecompute<T>) -> Result<()> {
        if pre.version != self.version {
            return Err(Error::Stale {
                cached: pre.version,
                current: self.version,
            });
        }
        Ok(())
    }

    /// User vector for one candidate from a cache.
    pub fn amortized_user(&self, pre: &UserPrecompute<T>, cand: &[T], counter: &mut OpCounter) -> Result<Vec<T>> {
        self.check_fresh(pre)?;
        self.check_candidate(cand)?;
        counter.set_phase(Phase::PerCandidate);
        let ab = self.ablation();
        let n = pre.mask.len();

        let attended = match &pre.attended {
            Some(a) => a.clone(),
            None => {
                let q = self.q_c.matvec(cand, counter);
                let mut heads = Vec::with_capacity(self.config.heads);
                for k in 0..self.config.heads {
                    let shift = pre.values[k].matvec(&q, counter);
                    heads.push(Self::shifted_attention(pre, k, &shift, counter)?);
                }
                Mat::hcat(&heads.iter().collect::<Vec<_>>())
            }
        };

        let mut local = pre.context.clone();
        if ab.candi_cnn {
            local.add_row_broadcast(&self.w_cand.matvec(cand, counter));
        }
        relu_in_place(&mut local);

        let fused = Mat::hcat(&[&local, &attended]).matmul_nt(&self.p_m, counter);
        let mut hidden = fused.matmul_nt(&self.phi_w1_m, counter);
        if ab.candi_att {
            hidden.add_row_broadcast(&self.phi_w1_c.matvec(cand, counter));
        }
        debug_assert_eq!(hidden.rows, n);
        self.pool(&mut hidden, &fused, &pre.mask, counter)
    }

    pub fn score_one(&self, pre: &UserPrecompute<T>, cand: &[T], counter: &mut OpCounter) -> Result<T> {
        let u = self.amortized_user(pre, cand, counter)?;
        counter.add(u.len() as u64);
        Ok(dot(&u, cand))
    }

    pub fn score_candidates(&self, pre: &UserPrecompute<T>, cands: &[Vec<T>], counter: &mut OpCounter) -> Result<Vec<T>> {
        cands.iter().map(|c| self.score_one(pre, c, counter)).collect()
    }

    /// Precompute for `clicks` and score all candidates.
    pub fn score(&self, clicks: &ClickMatrix<T>, cands: &[Vec<T>], counter: &mut OpCounter) -> Result<Vec<T>> {
        let pre = self.precompute(clicks, counter)?;
        self.score_candidates(&pre, cands, counter)
    }
}

/// Convert an `f64` vector to the scorer's precision.
pub fn to_real<T: Real>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::from_f64(x)).collect()
}

/// Score every impression with a resolvable history through the amortized
/// path. Returns the scored impressions and the number skipped for an empty
/// history.
pub fn score_impressions(
    frozen: &FrozenModel<f64>,
    news: &[Vec<f64>],
    imps: &[crate::data::EncodedImpression],
) -> Result<(Vec<crate::metrics::ScoredImpression>, usize)> {
    use rayon::prelude::*;
    let n = frozen.config.history_len;
    let d = frozen.config.dim;
    let out: Vec<Option<crate::metrics::ScoredImpression>> = imps
        .par_iter()
        .map(|imp| {
            if imp.history.is_empty() {
                return Ok(None);
            }
            let slots = crate::data::encode_history(&imp.history, n);
            let clicks = ClickMatrix::from_slots(&slots, news, d)?;
            let cands: Vec<Vec<f64>> = imp.candidates.iter().map(|&c| news[c as usize].clone()).collect();
            let scores = frozen.score(&clicks, &cands, &mut OpCounter::new())?;
            crate::metrics::ScoredImpression::new(scores, imp.labels.clone()).map(Some)
        })
        .collect::<Result<_>>()?;
    let skipped = out.iter().filter(|o| o.is_none()).count();
    Ok((out.into_iter().flatten().collect(), skipped))
}

/// Metric report for a model over a set of impressions.
pub fn evaluate_model(
    model: &CaumModel,
    news: &[Vec<f64>],
    imps: &[crate::data::EncodedImpression],
) -> Result<crate::metrics::MetricReport> {
    let frozen = FrozenModel::<f64>::from_model(model);
    let (scored, skipped) = score_impressions(&frozen, news, imps)?;
    let mut r = crate::metrics::evaluate(&scored);
    r.excluded_empty_history = skipped;
    Ok(r)
}
