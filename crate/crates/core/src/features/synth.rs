//! Synthetic two-domain impression stream with drifting user preferences.
//!
//! Users carry a latent vector that follows a stationary AR(1) walk across periods;
//! items carry static latents clustered by category. The click probability of user `u`
//! on item `i` in domain `d` during period `t` is
//! `σ(p_u(t)·(M_d q_i) + b_d + β·mean_{j∈seq}(q_j·q_i))`, and every click (in either
//! domain) is appended to the user's shared behavior history.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::io::PeriodData;
use super::record::{Domain, Record};
use super::schema::{FeatureSchema, FieldSpec, ITEM_FIELD, USER_FIELD};
use super::FeatureError;
use crate::numkern::{sigmoid, RngStream};

pub const CATEGORY_FIELD: &str = "item_category";
pub const SEGMENT_FIELD: &str = "user_segment";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub latent_dim: usize,
    pub users: usize,
    pub items: usize,
    pub categories: usize,
    pub segments: usize,
    /// Per-period autocorrelation of user latents.
    pub drift: f64,
    /// Overall interaction strength; `p·(M q)` has roughly this standard deviation.
    pub map_scale: f64,
    /// Relative size of the domain-specific perturbation of each domain map.
    pub map_noise: f64,
    pub source_bias: f64,
    pub target_bias: f64,
    pub source_per_period: usize,
    pub target_per_period: usize,
    /// Weight of the behavior-sequence affinity term.
    pub seq_weight: f64,
    /// Spread of item latents around their category centroid (0 = identical within a category).
    pub item_spread: f64,
    pub sequence_max_len: usize,
    pub embedding_dim: usize,
    pub periods: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            latent_dim: 8,
            users: 500,
            items: 1000,
            categories: 20,
            segments: 8,
            drift: 0.9,
            map_scale: 2.0,
            map_noise: 0.3,
            source_bias: -1.0,
            target_bias: -1.0,
            source_per_period: 200_000,
            target_per_period: 20_000,
            seq_weight: 1.0,
            item_spread: 0.7,
            sequence_max_len: 32,
            embedding_dim: 8,
            periods: 6,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: &str| Err(FeatureError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.drift) {
            return bad("drift must lie in [0, 1]");
        }
        if self.target_per_period == 0 || self.source_per_period < self.target_per_period {
            return bad("need source_per_period >= target_per_period >= 1");
        }
        if self.latent_dim == 0 || self.periods == 0 || self.sequence_max_len == 0 || self.embedding_dim == 0 {
            return bad("latent_dim, periods, sequence_max_len and embedding_dim must be positive");
        }
        if self.users < 2 || self.items < 2 || self.categories < 2 || self.segments < 2 {
            return bad("users, items, categories and segments need at least 2 values");
        }
        if self.items > u32::MAX as usize || self.users > u32::MAX as usize {
            return bad("vocabulary exceeds 32-bit ids");
        }
        if !(self.map_scale.is_finite() && self.map_noise.is_finite() && self.seq_weight.is_finite()) {
            return bad("map_scale, map_noise and seq_weight must be finite");
        }
        Ok(())
    }

    /// Dataset schema: `user_id, item_id, item_category, user_segment`.
    pub fn schema(&self) -> FeatureSchema {
        let d = self.embedding_dim;
        FeatureSchema::new(
            vec![
                FieldSpec::new(USER_FIELD, self.users, d),
                FieldSpec::new(ITEM_FIELD, self.items, d),
                FieldSpec::new(CATEGORY_FIELD, self.categories, d),
                FieldSpec::new(SEGMENT_FIELD, self.segments, d),
            ],
            self.sequence_max_len,
            self.periods,
        )
        .expect("validated config yields a valid schema")
    }
}

/// Latent state behind the generated stream.
#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    pub config: SynthConfig,
    pub item_latents: Vec<Vec<f64>>,
    pub item_category: Vec<u32>,
    pub user_segment: Vec<u32>,
    /// `user_latents[t][u]`.
    pub user_latents: Vec<Vec<Vec<f64>>>,
    pub source_map: Vec<Vec<f64>>,
    pub target_map: Vec<Vec<f64>>,
}

/// Generated stream plus the true click probability of every record.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub schema: FeatureSchema,
    pub periods: Vec<PeriodData>,
    pub source_probs: Vec<Vec<f64>>,
    pub target_probs: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn map_apply(m: &[Vec<f64>], q: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, q)).collect()
}

struct Draw {
    domain: Domain,
    user: u32,
    item: u32,
    uniform: f64,
}

impl SyntheticWorld {
    pub fn new(config: SynthConfig) -> Result<Self, FeatureError> {
        config.validate()?;
        let root = RngStream::new(config.seed);
        let k = config.latent_dim;
        let mut rng = root.split_named("items");
        let centroids: Vec<Vec<f64>> = (0..config.categories)
            .map(|_| (0..k).map(|_| rng.normal(0.0, 1.0)).collect())
            .collect();
        let norm = 1.0 / ((1.0 + config.item_spread * config.item_spread) * k as f64).sqrt();
        let mut item_category = Vec::with_capacity(config.items);
        let item_latents = (0..config.items)
            .map(|_| {
                let c = rng.below(config.categories);
                item_category.push(c as u32);
                centroids[c]
                    .iter()
                    .map(|&m| (m + config.item_spread * rng.normal(0.0, 1.0)) * norm)
                    .collect()
            })
            .collect();

        let mut rng = root.split_named("users");
        let seg_centroids: Vec<Vec<f64>> = (0..config.segments)
            .map(|_| (0..k).map(|_| rng.normal(0.0, 1.0)).collect())
            .collect();
        let mut user_segment = Vec::with_capacity(config.users);
        let initial: Vec<Vec<f64>> = (0..config.users)
            .map(|_| {
                let s = rng.below(config.segments);
                user_segment.push(s as u32);
                seg_centroids[s]
                    .iter()
                    .map(|&m| (m + rng.normal(0.0, 1.0)) * std::f64::consts::FRAC_1_SQRT_2)
                    .collect()
            })
            .collect();
        let innovation = (1.0 - config.drift * config.drift).max(0.0).sqrt();
        let mut user_latents = vec![initial];
        for t in 1..config.periods {
            let mut rng = root.split_named("drift").split(t as u64);
            let next = user_latents[t - 1]
                .iter()
                .map(|p: &Vec<f64>| {
                    p.iter()
                        .map(|&x| {
                            let eps = rng.normal(0.0, 1.0);
                            if innovation == 0.0 {
                                x
                            } else {
                                config.drift * x + innovation * eps
                            }
                        })
                        .collect()
                })
                .collect();
            user_latents.push(next);
        }

        let mut rng = root.split_named("maps");
        let shared: Vec<Vec<f64>> = (0..k)
            .map(|r| (0..k).map(|c| if r == c { 1.0 } else { 0.0 } + 0.3 * rng.normal(0.0, 1.0)).collect())
            .collect();
        let domain_map = |rng: &mut RngStream| -> Vec<Vec<f64>> {
            shared
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|&v| config.map_scale * (v + config.map_noise * rng.normal(0.0, 1.0)))
                        .collect()
                })
                .collect()
        };
        let source_map = domain_map(&mut rng);
        let target_map = domain_map(&mut rng);

        Ok(SyntheticWorld {
            config,
            item_latents,
            item_category,
            user_segment,
            user_latents,
            source_map,
            target_map,
        })
    }

    pub fn schema(&self) -> FeatureSchema {
        self.config.schema()
    }

    /// Click probability of `user` on `item` in `domain` during `period` given `seq`.
    pub fn click_probability(&self, domain: Domain, period: usize, user: u32, item: u32, seq: &[u32]) -> f64 {
        let (map, bias) = match domain {
            Domain::Source => (&self.source_map, self.config.source_bias),
            Domain::Target => (&self.target_map, self.config.target_bias),
        };
        let q = &self.item_latents[item as usize];
        let p = &self.user_latents[period][user as usize];
        let mut logit = dot(p, &map_apply(map, q)) + bias;
        if !seq.is_empty() && self.config.seq_weight != 0.0 {
            let affinity: f64 = seq.iter().map(|&j| dot(&self.item_latents[j as usize], q)).sum::<f64>() / seq.len() as f64;
            logit += self.config.seq_weight * affinity;
        }
        sigmoid(logit)
    }

    fn draw_period(&self, period: usize) -> Vec<Draw> {
        let cfg = &self.config;
        let mut rng = RngStream::new(cfg.seed).split_named("impressions").split(period as u64);
        let mut domains: Vec<Domain> = std::iter::repeat_n(Domain::Source, cfg.source_per_period)
            .chain(std::iter::repeat_n(Domain::Target, cfg.target_per_period))
            .collect();
        rng.shuffle(&mut domains);
        domains
            .into_iter()
            .map(|domain| Draw {
                domain,
                user: rng.below(cfg.users) as u32,
                item: rng.below(cfg.items) as u32,
                uniform: rng.uniform(0.0, 1.0),
            })
            .collect()
    }

    /// Generates every period. `threads` only parallelizes the per-period random draws;
    /// the output does not depend on it.
    pub fn generate(&self, threads: usize) -> SyntheticData {
        let periods = self.config.periods;
        let threads = threads.clamp(1, periods);
        let mut draws: Vec<Option<Vec<Draw>>> = (0..periods).map(|_| None).collect();
        if threads == 1 {
            for (p, slot) in draws.iter_mut().enumerate() {
                *slot = Some(self.draw_period(p));
            }
        } else {
            std::thread::scope(|scope| {
                let chunk = periods.div_ceil(threads);
                for (c, slots) in draws.chunks_mut(chunk).enumerate() {
                    scope.spawn(move || {
                        for (i, slot) in slots.iter_mut().enumerate() {
                            *slot = Some(self.draw_period(c * chunk + i));
                        }
                    });
                }
            });
        }

        let max_len = self.config.sequence_max_len;
        let mut history: Vec<VecDeque<u32>> = vec![VecDeque::with_capacity(max_len); self.config.users];
        let mut out = SyntheticData {
            schema: self.schema(),
            periods: Vec::with_capacity(periods),
            source_probs: Vec::with_capacity(periods),
            target_probs: Vec::with_capacity(periods),
        };
        for (p, period_draws) in draws.into_iter().enumerate() {
            let mut data = PeriodData::default();
            let (mut sp, mut tp) = (Vec::new(), Vec::new());
            for d in period_draws.expect("every period drawn") {
                let hist = &mut history[d.user as usize];
                let seq: Vec<u32> = hist.iter().copied().collect();
                let prob = self.click_probability(d.domain, p, d.user, d.item, &seq);
                let label = u8::from(d.uniform < prob);
                let record = Record {
                    domain: d.domain,
                    period: p as u32,
                    user_id: d.user,
                    item_id: d.item,
                    cats: vec![self.item_category[d.item as usize], self.user_segment[d.user as usize]],
                    seq,
                    label,
                };
                if label == 1 {
                    if hist.len() == max_len {
                        hist.pop_front();
                    }
                    hist.push_back(d.item);
                }
                match d.domain {
                    Domain::Source => {
                        data.source.push(record);
                        sp.push(prob);
                    }
                    Domain::Target => {
                        data.target.push(record);
                        tp.push(prob);
                    }
                }
            }
            out.periods.push(data);
            out.source_probs.push(sp);
            out.target_probs.push(tp);
        }
        out
    }
}

/// Convenience wrapper: build the world and generate single-threaded.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SyntheticData, FeatureError> {
    Ok(SyntheticWorld::new(cfg.clone())?.generate(1))
}
