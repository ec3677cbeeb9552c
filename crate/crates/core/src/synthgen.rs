//! Synthetic event sequences generated from the model itself: at every step
//! a handful of size-matched random candidates compete, and one is realized
//! with probability proportional to `exp(βᵀx)`.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_model::{EventSequence, HyperEvent, NodeSets, NodeType, SequenceBuilder, Timestamp};
use crate::network_state::NetworkState;
use crate::statistics::{EffectCatalog, EffectEvaluator};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    Config(String),
}

/// Set size `min + Poisson(mean − min)`, clipped at `max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeLaw {
    pub min: usize,
    pub mean: f64,
    pub max: usize,
}

impl SizeLaw {
    pub fn new(min: usize, mean: f64, max: usize) -> Self {
        SizeLaw { min, mean, max }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let rate = self.mean - self.min as f64;
        let extra = if rate > 0.0 {
            Poisson::new(rate).map_or(0.0, |p| p.sample(rng)) as usize
        } else {
            0
        };
        (self.min + extra).min(self.max)
    }

    fn validate(&self, what: &str, universe: usize) -> Result<(), SynthError> {
        if !(self.mean.is_finite() && self.mean >= self.min as f64 && self.min <= self.max) {
            return Err(SynthError::Config(format!("{what} size law needs min ≤ mean and min ≤ max")));
        }
        if self.max > universe {
            return Err(SynthError::Config(format!("{what} universe {universe} smaller than max size {}", self.max)));
        }
        Ok(())
    }
}

fn default_authors() -> SizeLaw {
    SizeLaw::new(1, 3.0, 12)
}

fn default_references() -> SizeLaw {
    SizeLaw::new(0, 8.0, 30)
}

fn default_keywords() -> SizeLaw {
    SizeLaw::new(0, 5.0, 10)
}

fn default_candidates() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_authors: usize,
    pub n_references: usize,
    pub n_keywords: usize,
    pub n_events: usize,
    #[serde(default = "default_authors")]
    pub author_size: SizeLaw,
    #[serde(default = "default_references")]
    pub reference_size: SizeLaw,
    #[serde(default = "default_keywords")]
    pub keyword_size: SizeLaw,
    /// Planted coefficients by effect name; missing effects are 0.
    #[serde(default)]
    pub beta_true: BTreeMap<String, f64>,
    #[serde(default = "default_candidates")]
    pub candidates_per_step: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(n_authors: usize, n_references: usize, n_keywords: usize, n_events: usize, seed: u64) -> Self {
        SynthConfig {
            n_authors,
            n_references,
            n_keywords,
            n_events,
            author_size: default_authors().clipped(n_authors),
            reference_size: default_references().clipped(n_references),
            keyword_size: default_keywords().clipped(n_keywords),
            beta_true: BTreeMap::new(),
            candidates_per_step: default_candidates(),
            seed,
        }
    }

    pub fn with_beta(mut self, effect: &str, value: f64) -> Self {
        self.beta_true.insert(effect.to_string(), value);
        self
    }

    pub fn universe(&self, ty: NodeType) -> usize {
        match ty {
            NodeType::Author => self.n_authors,
            NodeType::Reference => self.n_references,
            NodeType::Keyword => self.n_keywords,
        }
    }

    pub fn size_law(&self, ty: NodeType) -> &SizeLaw {
        match ty {
            NodeType::Author => &self.author_size,
            NodeType::Reference => &self.reference_size,
            NodeType::Keyword => &self.keyword_size,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.candidates_per_step < 2 {
            return Err(SynthError::Config("candidates_per_step must be at least 2".into()));
        }
        if self.author_size.min == 0 {
            return Err(SynthError::Config("events need at least one author".into()));
        }
        for ty in NodeType::ALL {
            self.size_law(ty).validate(&ty.to_string(), self.universe(ty))?;
        }
        for (name, b) in &self.beta_true {
            if !b.is_finite() {
                return Err(SynthError::Config(format!("beta for {name} is not finite")));
            }
        }
        self.planted_catalog().map(|_| ())
    }

    /// Catalog of the effects with non-zero planted coefficients.
    fn planted_catalog(&self) -> Result<(EffectCatalog, Vec<f64>), SynthError> {
        let planted: Vec<(&String, f64)> = self.beta_true.iter().filter(|(_, b)| **b != 0.0).map(|(n, b)| (n, *b)).collect();
        let names: Vec<&str> = planted.iter().map(|(n, _)| n.as_str()).collect();
        let catalog = EffectCatalog::standard()
            .select(&names)
            .map_err(|e| SynthError::Config(e.to_string()))?;
        Ok((catalog, planted.into_iter().map(|(_, b)| b).collect()))
    }

    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let cfg: SynthConfig = serde_json::from_str(text).map_err(|e| SynthError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl SizeLaw {
    fn clipped(self, universe: usize) -> Self {
        let max = self.max.min(universe);
        SizeLaw { min: self.min.min(max), mean: self.mean.min(max as f64), max }
    }
}

fn dot(x: &[f64], beta: &[f64]) -> f64 {
    x.iter().zip(beta).map(|(x, b)| x * b).sum()
}

fn uniform_event<R: Rng>(cfg: &SynthConfig, sizes: &[usize; 3], rng: &mut R) -> NodeSets {
    let [a, r, w] = NodeType::ALL.map(|ty| {
        index::sample(rng, cfg.universe(ty), sizes[ty.index()])
            .into_iter()
            .map(|i| i as u32)
            .collect::<Vec<u32>>()
    });
    NodeSets::new(a, r, w)
}

fn weighted_pick<R: Rng>(scores: &[f64], rng: &mut R) -> usize {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    scores.len() - 1
}

/// Simulated sequence plus the position of the realized candidate per step.
#[derive(Debug, Clone)]
pub struct Trace {
    pub sequence: EventSequence,
    pub chosen: Vec<usize>,
}

pub fn simulate(cfg: &SynthConfig) -> Result<EventSequence, SynthError> {
    simulate_traced(cfg).map(|t| t.sequence)
}

pub fn simulate_traced(cfg: &SynthConfig) -> Result<Trace, SynthError> {
    cfg.validate()?;
    let (catalog, beta) = cfg.planted_catalog()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = NetworkState::new();
    let mut builder = SequenceBuilder::new();
    let mut chosen = Vec::with_capacity(cfg.n_events);
    let k = cfg.candidates_per_step;
    for step in 0..cfg.n_events {
        let t = Timestamp::from(step as i64 + 1);
        let sizes = NodeType::ALL.map(|ty| cfg.size_law(ty).sample(&mut rng));
        let candidates: Vec<NodeSets> = (0..k).map(|_| uniform_event(cfg, &sizes, &mut rng)).collect();
        let pick = if catalog.is_empty() {
            rng.random_range(0..k)
        } else {
            let evaluator = EffectEvaluator::new(&state, t, &catalog);
            let scores: Vec<f64> = candidates.par_iter().map(|c| dot(&evaluator.evaluate(c), &beta)).collect();
            weighted_pick(&scores, &mut rng)
        };
        chosen.push(pick);
        let nodes = candidates.into_iter().nth(pick).expect("pick < k");
        let labels = |ty: NodeType, prefix: char| -> Vec<String> { nodes.get(ty).iter().map(|id| format!("{prefix}{id}")).collect() };
        builder
            .push(step + 1, t, &labels(NodeType::Author, 'a'), &labels(NodeType::Reference, 'r'), &labels(NodeType::Keyword, 'k'))
            .map_err(|e| SynthError::Config(e.to_string()))?;
        state
            .apply_event(&HyperEvent::new(t, step, nodes))
            .map_err(|e| SynthError::Config(e.to_string()))?;
    }
    Ok(Trace { sequence: builder.finish(), chosen })
}
