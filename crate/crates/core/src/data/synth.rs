//! Logit-world generator with known ground-truth factors.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::SessionDataset;
use crate::error::{Error, Result};
use crate::model::{EntityId, ParameterStore, Session, StoreConfig};
use crate::objectives::{softmax_ext_probs, softmax_probs};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub dim: usize,
    pub users: usize,
    pub items: usize,
    pub sessions_per_user: usize,
    pub offer_size: usize,
    pub seed: u64,
    /// Standard deviation of the true utilities. Factor components are drawn
    /// from `N(0, σ²)` with `σ⁴ = utility_scale² / dim`, so `φ_u · φ_i` has
    /// variance `utility_scale²` whatever the dimensionality.
    pub utility_scale: f64,
    /// Mean action threshold; `None` disables no-response sessions.
    pub threshold_mean: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dim: 5,
            users: 500,
            items: 100,
            sessions_per_user: 20,
            offer_size: 10,
            seed: 0,
            utility_scale: DEFAULT_UTILITY_SCALE,
            threshold_mean: None,
        }
    }
}

/// Default spread of true utilities in generated worlds.
pub const DEFAULT_UTILITY_SCALE: f64 = 2.0;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.users == 0 || self.items == 0 {
            return Err(Error::config("dim, users and items must be positive"));
        }
        if self.offer_size == 0 || self.offer_size > self.items {
            return Err(Error::config(format!(
                "offer size must be in 1..={}, got {}",
                self.items, self.offer_size
            )));
        }
        if !(self.utility_scale >= 0.0 && self.utility_scale.is_finite()) {
            return Err(Error::config("utility scale must be finite and non-negative"));
        }
        Ok(())
    }

    fn factor_std(&self) -> f64 {
        (self.utility_scale * self.utility_scale / self.dim as f64).powf(0.25)
    }
}

pub fn user_id(k: usize) -> EntityId {
    format!("u{k}")
}

pub fn item_id(k: usize) -> EntityId {
    format!("i{k}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticGroundTruth {
    /// True factors (and thresholds, when enabled) as a dense store.
    pub store: ParameterStore,
    pub config: SynthConfig,
}

/// Draws a ground-truth world and samples sessions from it.
pub fn synth_generate(config: &SynthConfig) -> Result<(SyntheticGroundTruth, SessionDataset)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store_config = StoreConfig::new(config.dim, 0.0, 0);
    store_config.thresholds = config.threshold_mean.is_some();
    let users: Vec<EntityId> = (0..config.users).map(user_id).collect();
    let items: Vec<EntityId> = (0..config.items).map(item_id).collect();
    let mut store = ParameterStore::zeroed(users.iter().cloned(), items.iter().cloned(), &store_config)?;
    let factor = Normal::new(0.0, config.factor_std()).map_err(|e| Error::config(e.to_string()))?;
    for u in &users {
        let v: Vec<f64> = (0..config.dim).map(|_| factor.sample(&mut rng)).collect();
        store.set_user_factor(u, &v)?;
    }
    for i in &items {
        let v: Vec<f64> = (0..config.dim).map(|_| factor.sample(&mut rng)).collect();
        store.set_item_factor(i, &v)?;
    }
    if let Some(mean) = config.threshold_mean {
        let spread = Normal::new(mean, config.utility_scale.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::config(e.to_string()))?;
        for u in &users {
            store.set_threshold(u, spread.sample(&mut rng))?;
        }
    }
    let sessions = sample_sessions(
        &store,
        config.sessions_per_user,
        config.offer_size,
        &mut rng,
    )?;
    let dataset = SessionDataset {
        sessions,
        users: users.into_iter().collect(),
        items: items.into_iter().collect(),
    };
    Ok((
        SyntheticGroundTruth {
            store,
            config: config.clone(),
        },
        dataset,
    ))
}

fn draw(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// For every user of `truth`, samples `per_user` sessions: a uniformly random
/// offer set of `offer_size` items, then a choice drawn from the logit model
/// (including the no-response outcome when `truth` has thresholds).
pub fn sample_sessions<R: Rng>(
    truth: &ParameterStore,
    per_user: usize,
    offer_size: usize,
    rng: &mut R,
) -> Result<Vec<Session>> {
    let items: Vec<&EntityId> = truth.items().iter().collect();
    if offer_size == 0 || offer_size > items.len() {
        return Err(Error::config(format!(
            "offer size must be in 1..={}, got {offer_size}",
            items.len()
        )));
    }
    let mut sessions = Vec::with_capacity(truth.users().len() * per_user);
    for u in truth.users() {
        for _ in 0..per_user {
            let offers: Vec<EntityId> = index::sample(rng, items.len(), offer_size)
                .into_iter()
                .map(|k| items[k].clone())
                .collect();
            let r = offers
                .iter()
                .map(|i| truth.utility(u, i))
                .collect::<Result<Vec<f64>>>()?;
            let decisions = if truth.has_thresholds() {
                let (mut probs, none) = softmax_ext_probs(&r, truth.threshold(u)?);
                probs.push(none);
                let k = draw(&probs, rng);
                if k == offers.len() {
                    vec![]
                } else {
                    vec![offers[k].clone()]
                }
            } else {
                vec![offers[draw(&softmax_probs(&r), rng)].clone()]
            };
            sessions.push(Session::new(u.clone(), offers, decisions)?);
        }
    }
    Ok(sessions)
}
