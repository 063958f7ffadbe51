//! The trainable model: named parameters plus the news and user encoders
//! expressed on the autodiff tape.

pub mod news;
pub mod user;

use std::path::Path;

use rayon::prelude::*;

use crate::autodiff::checkpoint::{read_container, save_params};
use crate::autodiff::{Graph, ParamId, ParamStore, Tensor};
use crate::config::ModelConfig;
use crate::data::{EncodedNews, VocabSizes};
use crate::error::{Error, Result};

/// Query/key/value heads followed by additive pooling, used for both titles
/// and entity lists.
#[derive(Debug, Clone)]
pub struct AttnPoolParams {
    pub wq: Vec<ParamId>,
    pub wk: Vec<ParamId>,
    pub wv: Vec<ParamId>,
    pub pool_w: ParamId,
    pub pool_b: ParamId,
    pub pool_q: ParamId,
}

#[derive(Debug, Clone)]
pub struct NewsParams {
    pub word_emb: ParamId,
    pub entity_emb: ParamId,
    pub topic_emb: ParamId,
    pub title: AttnPoolParams,
    pub entity: AttnPoolParams,
    /// Substituted when a title has no known token.
    pub title_empty: ParamId,
    /// Substituted when an article has no entity.
    pub entity_empty: ParamId,
}

#[derive(Debug, Clone)]
pub struct UserParams {
    /// Click query projection, shared by all heads.
    pub q_u: ParamId,
    /// Candidate query projection.
    pub q_c: ParamId,
    /// Per-head bilinear maps between queries and clicks, `d × d`.
    pub w_r: Vec<ParamId>,
    /// Per-head output projections, `d_h × d`.
    pub w_o: Vec<ParamId>,
    /// Window filter over `2h + 1` clicks plus the candidate.
    pub w_c: ParamId,
    pub b_c: Option<ParamId>,
    /// Fusion of the local and self-attention representations, `d × 2d`.
    pub p_m: ParamId,
    pub phi_w1: ParamId,
    pub phi_b1: ParamId,
    pub phi_w2: ParamId,
    pub phi_b2: ParamId,
}

#[derive(Debug, Clone)]
pub struct ParamIds {
    pub news: NewsParams,
    pub user: UserParams,
}

fn attn_pool(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig) -> Result<AttnPoolParams> {
    let (d, dh) = (cfg.dim, cfg.head_dim);
    let mut heads = |kind: &str| -> Result<Vec<ParamId>> {
        (0..cfg.heads)
            .map(|k| store.glorot(&format!("{prefix}.{kind}.{k}"), dh, d))
            .collect()
    };
    let wq = heads("wq")?;
    let wk = heads("wk")?;
    let wv = heads("wv")?;
    Ok(AttnPoolParams {
        wq,
        wk,
        wv,
        pool_w: store.glorot(&format!("{prefix}.pool.w"), cfg.pool_hidden, d)?,
        pool_b: store.zeros(&format!("{prefix}.pool.b"), &[cfg.pool_hidden])?,
        pool_q: store.glorot(&format!("{prefix}.pool.q"), 1, cfg.pool_hidden)?,
    })
}

/// Register every parameter in a fixed order; the order is part of the
/// checkpoint layout.
fn build_params(store: &mut ParamStore, cfg: &ModelConfig, sizes: &VocabSizes) -> Result<ParamIds> {
    let d = cfg.dim;
    let news = NewsParams {
        word_emb: store.normal("news.word_emb", &[sizes.words, d], 0.1)?,
        entity_emb: store.normal("news.entity_emb", &[sizes.entities, d], 0.1)?,
        topic_emb: store.normal("news.topic_emb", &[sizes.topics, d], 0.1)?,
        title: attn_pool(store, "news.title", cfg)?,
        entity: attn_pool(store, "news.entity", cfg)?,
        title_empty: store.normal("news.title.empty", &[d], 0.1)?,
        entity_empty: store.normal("news.entity.empty", &[d], 0.1)?,
    };
    let q_u = store.glorot("user.q_u", d, d)?;
    let q_c = store.glorot("user.q_c", d, d)?;
    let w_r = (0..cfg.heads)
        .map(|k| store.glorot(&format!("user.w_r.{k}"), d, d))
        .collect::<Result<_>>()?;
    let w_o = (0..cfg.heads)
        .map(|k| store.glorot(&format!("user.w_o.{k}"), cfg.head_dim, d))
        .collect::<Result<_>>()?;
    let w_c = store.glorot("user.w_c", d, (2 * cfg.window_half + 2) * d)?;
    let b_c = if cfg.cnn_bias {
        Some(store.zeros("user.b_c", &[d])?)
    } else {
        None
    };
    let user = UserParams {
        q_u,
        q_c,
        w_r,
        w_o,
        w_c,
        b_c,
        p_m: store.glorot("user.p_m", d, 2 * d)?,
        phi_w1: store.glorot("user.phi.w1", cfg.phi_hidden, 2 * d)?,
        phi_b1: store.zeros("user.phi.b1", &[cfg.phi_hidden])?,
        phi_w2: store.glorot("user.phi.w2", 1, cfg.phi_hidden)?,
        phi_b2: store.zeros("user.phi.b2", &[1])?,
    };
    Ok(ParamIds { news, user })
}

#[derive(Debug, Clone)]
pub struct CaumModel {
    pub config: ModelConfig,
    pub sizes: VocabSizes,
    pub params: ParamStore,
    pub ids: ParamIds,
}

impl CaumModel {
    pub fn new(config: ModelConfig, sizes: VocabSizes, seed: u64) -> Result<Self> {
        config.validate()?;
        if sizes.words == 0 || sizes.entities == 0 || sizes.topics == 0 {
            return Err(Error::Config("vocabulary sizes must include the reserved id".into()));
        }
        let mut params = ParamStore::new(seed);
        let ids = build_params(&mut params, &config, &sizes)?;
        Ok(Self {
            config,
            sizes,
            params,
            ids,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_params(&self.params, path)
    }

    /// Rebuild from a checkpoint; vocabulary sizes come from the stored
    /// embedding tables.
    pub fn load(path: &Path, config: ModelConfig) -> Result<Self> {
        let entries = read_container(path)?;
        let rows = |name: &str| {
            entries
                .iter()
                .find(|e| e.name == name)
                .and_then(|e| e.shape.first().copied())
                .ok_or_else(|| Error::format(path, format!("missing {name}")))
        };
        let sizes = VocabSizes {
            words: rows("news.word_emb")?,
            entities: rows("news.entity_emb")?,
            topics: rows("news.topic_emb")?,
        };
        let mut m = Self::new(config, sizes, 0)?;
        let expected = m.params.len();
        let found = entries.len();
        for e in entries {
            let crate::autodiff::checkpoint::Payload::F32(data) = e.payload else {
                return Err(Error::format(path, format!("{} is not an f32 section", e.name)));
            };
            let id = m
                .params
                .id(&e.name)
                .map_err(|_| Error::format(path, format!("unexpected parameter {}", e.name)))?;
            if m.params.value(id).shape() != e.shape.as_slice() {
                return Err(Error::shape("checkpoint load", m.params.value(id).shape(), &e.shape));
            }
            *m.params.value_mut(id) = Tensor::new(e.shape, data.into_iter().map(f64::from).collect())?;
        }
        if found != expected {
            return Err(Error::format(
                path,
                format!("checkpoint has {found} parameters, config expects {expected}"),
            ));
        }
        Ok(m)
    }

    /// Forward-only news vectors, one `d`-vector per article.
    pub fn news_vectors(&self, news: &[EncodedNews]) -> Result<Vec<Vec<f64>>> {
        let chunks: Vec<Result<Vec<Vec<f64>>>> = news
            .par_chunks(64)
            .map(|chunk| {
                let mut g = Graph::with_params(&self.params);
                chunk
                    .iter()
                    .map(|n| {
                        let v = news::encode_news(&mut g, &self.ids.news, &self.config, n)?;
                        Ok(g.value(v).to_vec())
                    })
                    .collect()
            })
            .collect();
        let mut out = Vec::with_capacity(news.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }
}
