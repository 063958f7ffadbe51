//! Seeded generator for MIND-shaped corpora with a known click model.
//!
//! Every article has a topic and an entity group. Titles carry topic words
//! and filler only, entities come from the group's pool, so an article's
//! identity is the pair (topic, group). A user likes a few (topic, group)
//! pairs with distinct topics and distinct groups. Negatives mix crossed
//! pairs (a liked topic with another liked group), liked-topic-only pairs
//! and random articles. Crossed negatives cannot be separated from
//! positives by any score that is additive in topic and group, which is
//! what a candidate-agnostic user vector produces.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mind::{Catalog, Impression, NewsArticle};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub users: usize,
    pub news: usize,
    pub topics: usize,
    pub groups: usize,
    pub words_per_topic: usize,
    pub filler_words: usize,
    pub entities_per_group: usize,
    /// Probability that an article has no entities.
    pub no_entity_rate: f64,
    pub min_history: usize,
    pub max_history: usize,
    /// Liked (topic, group) pairs per user, drawn from `min..=max`.
    pub min_interests: usize,
    pub max_interests: usize,
    pub train_impressions: usize,
    pub valid_impressions: usize,
    pub positives: usize,
    pub negatives: usize,
    /// Shares of crossed and liked-topic-only negatives; the rest are random.
    pub crossed_rate: f64,
    pub topic_only_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            users: 200,
            news: 500,
            topics: 8,
            groups: 8,
            words_per_topic: 6,
            filler_words: 40,
            entities_per_group: 5,
            no_entity_rate: 0.1,
            min_history: 10,
            max_history: 30,
            min_interests: 2,
            max_interests: 3,
            train_impressions: 4,
            valid_impressions: 1,
            positives: 2,
            negatives: 6,
            crossed_rate: 0.4,
            topic_only_rate: 0.3,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// The small corpus used by the overfit sanity check.
    pub fn tiny() -> Self {
        Self {
            users: 20,
            news: 40,
            topics: 4,
            groups: 4,
            min_history: 4,
            max_history: 8,
            train_impressions: 3,
            valid_impressions: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.users == 0 || self.news == 0 {
            return bad("users and news must be positive");
        }
        if self.news < self.topics * self.groups {
            return bad("news must cover every (topic, group) pair");
        }
        if self.min_interests < 2 || self.max_interests < self.min_interests {
            return bad("interests must satisfy 2 <= min <= max");
        }
        if self.max_interests > self.topics.min(self.groups) {
            return bad("max interests cannot exceed topics or groups");
        }
        if self.min_history == 0 || self.max_history < self.min_history {
            return bad("history bounds must satisfy 1 <= min <= max");
        }
        if self.positives == 0 || self.negatives == 0 {
            return bad("impressions need positives and negatives");
        }
        if self.crossed_rate + self.topic_only_rate > 1.0 {
            return bad("negative shares must sum to at most 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub catalog: Catalog,
    pub train: Vec<Impression>,
    pub valid: Vec<Impression>,
    /// (topic, group) of each article, by catalog position.
    pub labels: Vec<(usize, usize)>,
    /// Liked (topic, group) pairs per user, in user order.
    pub interests: Vec<Vec<(usize, usize)>>,
}

struct Pools {
    by_pair: Vec<Vec<usize>>,
    groups: usize,
}

impl Pools {
    fn pair(&self, t: usize, g: usize) -> &[usize] {
        &self.by_pair[t * self.groups + g]
    }
}

fn make_article(i: usize, t: usize, g: usize, cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> NewsArticle {
    let n_topic = rng.random_range(2..=3);
    let n_filler = rng.random_range(2..=4);
    let mut words: Vec<String> = Vec::with_capacity(n_topic + n_filler);
    for _ in 0..n_topic {
        words.push(format!("t{t}w{}", rng.random_range(0..cfg.words_per_topic)));
    }
    for _ in 0..n_filler {
        words.push(format!("f{}", rng.random_range(0..cfg.filler_words)));
    }
    words.shuffle(rng);
    let entities = if rng.random::<f64>() < cfg.no_entity_rate {
        Vec::new()
    } else {
        let k = rng.random_range(1..=3).min(cfg.entities_per_group);
        rand::seq::index::sample(rng, cfg.entities_per_group, k)
            .into_iter()
            .map(|e| format!("Q{g}x{e}"))
            .collect()
    };
    NewsArticle {
        news_id: format!("N{}", i + 1),
        topic: format!("topic{t}"),
        title: words.join(" "),
        entities,
    }
}

fn pick(pool: &[usize], rng: &mut ChaCha8Rng) -> usize {
    *pool.choose(rng).expect("pool is non-empty")
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pairs = cfg.topics * cfg.groups;

    let mut catalog = Catalog::new();
    let mut labels = Vec::with_capacity(cfg.news);
    let mut pools = Pools {
        by_pair: vec![Vec::new(); pairs],
        groups: cfg.groups,
    };
    for i in 0..cfg.news {
        // the first `pairs` articles cover every pair once
        let p = if i < pairs { i } else { rng.random_range(0..pairs) };
        let (t, g) = (p / cfg.groups, p % cfg.groups);
        catalog.insert(make_article(i, t, g, cfg, &mut rng));
        labels.push((t, g));
        pools.by_pair[p].push(i);
    }
    let id = |i: usize| format!("N{}", i + 1);

    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut next_id = 1u32;
    let mut interests = Vec::with_capacity(cfg.users);
    for u in 0..cfg.users {
        let k = rng.random_range(cfg.min_interests..=cfg.max_interests);
        let topics = rand::seq::index::sample(&mut rng, cfg.topics, k).into_vec();
        let groups = rand::seq::index::sample(&mut rng, cfg.groups, k).into_vec();
        let liked: Vec<(usize, usize)> = topics.iter().copied().zip(groups.iter().copied()).collect();

        let h = rng.random_range(cfg.min_history..=cfg.max_history);
        let history: Vec<String> = (0..h)
            .map(|_| {
                let (t, g) = *liked.choose(&mut rng).expect("interests");
                id(pick(pools.pair(t, g), &mut rng))
            })
            .collect();

        interests.push(liked.clone());
        let total = cfg.train_impressions + cfg.valid_impressions;
        for s in 0..total {
            let mut cands: Vec<(String, u8)> = Vec::with_capacity(cfg.positives + cfg.negatives);
            for _ in 0..cfg.positives {
                let (t, g) = *liked.choose(&mut rng).expect("interests");
                cands.push((id(pick(pools.pair(t, g), &mut rng)), 1));
            }
            for _ in 0..cfg.negatives {
                let r = rng.random::<f64>();
                let ta = rng.random_range(0..k);
                let news = if r < cfg.crossed_rate {
                    let mut gb = rng.random_range(0..k - 1);
                    if gb >= ta {
                        gb += 1;
                    }
                    pick(pools.pair(topics[ta], groups[gb]), &mut rng)
                } else if r < cfg.crossed_rate + cfg.topic_only_rate {
                    let g = loop {
                        let g = rng.random_range(0..cfg.groups);
                        if !groups.contains(&g) {
                            break g;
                        }
                        if cfg.groups == k {
                            break groups[(ta + 1) % k];
                        }
                    };
                    pick(pools.pair(topics[ta], g), &mut rng)
                } else {
                    loop {
                        let n = rng.random_range(0..cfg.news);
                        if !liked.contains(&labels[n]) {
                            break n;
                        }
                    }
                };
                cands.push((id(news), 0));
            }
            cands.shuffle(&mut rng);
            let imp = Impression {
                impression_id: next_id,
                user_id: format!("U{}", u + 1),
                history: history.clone(),
                candidates: cands,
            };
            next_id += 1;
            if s < cfg.train_impressions {
                train.push(imp);
            } else {
                valid.push(imp);
            }
        }
    }
    Ok(SyntheticCorpus {
        catalog,
        train,
        valid,
        labels,
        interests,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_corpus() {
        let a = generate(&SyntheticConfig::default()).unwrap();
        let b = generate(&SyntheticConfig::default()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.catalog.articles(), b.catalog.articles());
        assert_eq!(a.catalog.len(), 500);
        assert_eq!(a.train.len(), 800);
        assert_eq!(a.valid.len(), 200);
    }

    #[test]
    fn positives_are_liked_and_negatives_are_not() {
        let c = generate(&SyntheticConfig::tiny()).unwrap();
        for imp in c.train.iter().chain(&c.valid) {
            let u: usize = imp.user_id[1..].parse().unwrap();
            let liked = &c.interests[u - 1];
            for (n, l) in &imp.candidates {
                let lab = c.labels[c.catalog.position(n).unwrap()];
                assert_eq!(liked.contains(&lab), *l == 1);
            }
            for h in &imp.history {
                assert!(liked.contains(&c.labels[c.catalog.position(h).unwrap()]));
            }
        }
    }

    #[test]
    fn too_few_news_is_rejected() {
        let cfg = SyntheticConfig {
            news: 10,
            ..SyntheticConfig::default()
        };
        assert!(generate(&cfg).is_err());
    }
}
