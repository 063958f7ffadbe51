//! Model, training and run configuration.
//!
//! Configuration files are flat `key = value` text. Keys are the long CLI flag
//! names without the leading dashes, so a file and a command line can express
//! exactly the same settings; flags win when both are given.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Which user-encoder blocks see the candidate news. Turning a block off
/// zeroes the candidate contribution inside it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ablation {
    pub candi_self_att: bool,
    pub candi_cnn: bool,
    pub candi_att: bool,
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        candi_self_att: true,
        candi_cnn: true,
        candi_att: true,
    };
    /// All three blocks candidate-agnostic.
    pub const BASE: Ablation = Ablation {
        candi_self_att: false,
        candi_cnn: false,
        candi_att: false,
    };

    pub fn name(&self) -> String {
        match (self.candi_self_att, self.candi_cnn, self.candi_att) {
            (true, true, true) => "caum".into(),
            (false, false, false) => "base".into(),
            (s, c, a) => {
                let mut parts = vec!["base"];
                if s {
                    parts.push("candi-self-att");
                }
                if c {
                    parts.push("candi-cnn");
                }
                if a {
                    parts.push("candi-att");
                }
                parts.join("+")
            }
        }
    }
}

impl Default for Ablation {
    fn default() -> Self {
        Self::FULL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// News and user vector width `d`.
    pub dim: usize,
    /// Attention heads `K`.
    pub heads: usize,
    /// Per-head output width; `heads * head_dim == dim`.
    pub head_dim: usize,
    /// Candidate-aware CNN window is `2h + 1` clicks.
    pub window_half: usize,
    /// Clicked-news history length `N`.
    pub history_len: usize,
    pub title_len: usize,
    pub entity_len: usize,
    /// Hidden width of the click-candidate relevance MLP.
    pub phi_hidden: usize,
    /// Query width of the additive pooling in the news encoder.
    pub pool_hidden: usize,
    pub cnn_bias: bool,
    pub ablation: Ablation,
}

impl ModelConfig {
    /// Dimensions used for the MIND experiments: 400-wide vectors, 20 heads of
    /// 20 dimensions, window size 3.
    pub fn paper() -> Self {
        Self {
            dim: 400,
            heads: 20,
            head_dim: 20,
            window_half: 1,
            history_len: 50,
            title_len: 30,
            entity_len: 5,
            phi_hidden: 128,
            pool_hidden: 200,
            cnn_bias: true,
            ablation: Ablation::FULL,
        }
    }

    /// Laptop-sized preset.
    pub fn desk() -> Self {
        Self {
            dim: 64,
            heads: 4,
            head_dim: 16,
            history_len: 20,
            phi_hidden: 32,
            pool_hidden: 32,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("heads", self.heads),
            ("head-dim", self.head_dim),
            ("history-len", self.history_len),
            ("title-len", self.title_len),
            ("entity-len", self.entity_len),
            ("phi-hidden", self.phi_hidden),
            ("pool-hidden", self.pool_hidden),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "heads must divide dim (heads={}, dim={})",
                self.heads, self.dim
            )));
        }
        if self.heads * self.head_dim != self.dim {
            return Err(Error::Config(format!(
                "heads * head-dim must equal dim ({} * {} != {})",
                self.heads, self.head_dim, self.dim
            )));
        }
        if 2 * self.window_half + 1 > self.history_len {
            return Err(Error::Config(format!(
                "window 2h+1 = {} exceeds history-len {}",
                2 * self.window_half + 1,
                self.history_len
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub negatives: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            lr: 5e-5,
            batch_size: 32,
            seed: 0,
            negatives: 1,
        }
    }
}

impl TrainConfig {
    /// Settings paired with [`ModelConfig::desk`]: a short schedule on small
    /// data needs a larger step than the full-scale default.
    pub fn desk() -> Self {
        Self {
            epochs: 10,
            lr: 1e-3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.negatives == 0 {
            return Err(Error::Config(
                "epochs, batch-size and negatives must be positive".into(),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Model plus training settings, as read from a file and flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::paper(),
            train: TrainConfig::default(),
            threads: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "preset",
    "dim",
    "heads",
    "head-dim",
    "window-half",
    "history-len",
    "title-len",
    "entity-len",
    "phi-hidden",
    "pool-hidden",
    "cnn-bias",
    "candi-self-att",
    "candi-cnn",
    "candi-att",
    "epochs",
    "lr",
    "batch-size",
    "seed",
    "negatives",
    "threads",
];

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key} expects on|off, got {v:?}"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected key=value", n + 1)));
        };
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(Error::Config(format!("line {}: unknown key {k:?}", n + 1)));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::default()),
            "desk" => Ok(Self {
                model: ModelConfig::desk(),
                train: TrainConfig::desk(),
                threads: None,
            }),
            _ => Err(Error::Config(format!("unknown preset {name:?} (paper|desk)"))),
        }
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "preset" => {
                let threads = self.threads;
                *self = Self::from_preset(v)?;
                self.threads = threads;
            }
            "dim" => m.dim = parse_num(key, v)?,
            "heads" => m.heads = parse_num(key, v)?,
            "head-dim" => m.head_dim = parse_num(key, v)?,
            "window-half" => m.window_half = parse_num(key, v)?,
            "history-len" => m.history_len = parse_num(key, v)?,
            "title-len" => m.title_len = parse_num(key, v)?,
            "entity-len" => m.entity_len = parse_num(key, v)?,
            "phi-hidden" => m.phi_hidden = parse_num(key, v)?,
            "pool-hidden" => m.pool_hidden = parse_num(key, v)?,
            "cnn-bias" => m.cnn_bias = parse_bool(key, v)?,
            "candi-self-att" => m.ablation.candi_self_att = parse_bool(key, v)?,
            "candi-cnn" => m.ablation.candi_cnn = parse_bool(key, v)?,
            "candi-att" => m.ablation.candi_att = parse_bool(key, v)?,
            "epochs" => t.epochs = parse_num(key, v)?,
            "lr" => t.lr = parse_num(key, v)?,
            "batch-size" => t.batch_size = parse_num(key, v)?,
            "seed" => t.seed = parse_num(key, v)?,
            "negatives" => t.negatives = parse_num(key, v)?,
            "threads" => self.threads = Some(parse_num(key, v)?),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Apply settings in order, `preset` first so explicit keys override it.
    pub fn apply(&mut self, kv: &BTreeMap<String, String>) -> Result<()> {
        if let Some(p) = kv.get("preset") {
            self.set("preset", p)?;
        }
        for (k, v) in kv.iter().filter(|(k, _)| k.as_str() != "preset") {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply(&parse_kv(&text)?)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        Ok(())
    }

    /// The effective configuration in file form; parsing it back yields `self`.
    pub fn to_kv(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("dim", m.dim.to_string());
        put("heads", m.heads.to_string());
        put("head-dim", m.head_dim.to_string());
        put("window-half", m.window_half.to_string());
        put("history-len", m.history_len.to_string());
        put("title-len", m.title_len.to_string());
        put("entity-len", m.entity_len.to_string());
        put("phi-hidden", m.phi_hidden.to_string());
        put("pool-hidden", m.pool_hidden.to_string());
        put("cnn-bias", on_off(m.cnn_bias).into());
        put("candi-self-att", on_off(m.ablation.candi_self_att).into());
        put("candi-cnn", on_off(m.ablation.candi_cnn).into());
        put("candi-att", on_off(m.ablation.candi_att).into());
        put("epochs", t.epochs.to_string());
        put("lr", format!("{:e}", t.lr));
        put("batch-size", t.batch_size.to_string());
        put("seed", t.seed.to_string());
        put("negatives", t.negatives.to_string());
        if let Some(n) = self.threads {
            put("threads", n.to_string());
        }
        s
    }
}
