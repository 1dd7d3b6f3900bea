//! Stochastic gradient descent over session streams.
//!
//! Each visit of a record moves the touched parameters along the negative
//! gradient with weight decay:
//!
//! ```text
//! φ_i ← φ_i − η [l'(r_ui) φ_u + λ_I φ_i]          for i ∈ O
//! φ_u ← φ_u − η [Σ_{i∈O} l'(r_ui) φ_i + λ_U φ_u]
//! ```
//!
//! All gradients of a record are taken at the pre-step values. The learning
//! rate of epoch `e` is `lr0 · anneal^e`.

use std::time::Instant;

use indexmap::IndexSet;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ContentFeatures, EntityId, ParameterStore, Session, StoreConfig};
use crate::objectives::{
    compile, entity_grads, utility_grad, Compiled, DyadObservation, LossKind, Record,
};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub dim: usize,
    pub reg_user: f64,
    pub reg_item: f64,
    pub lr0: f64,
    pub anneal: f64,
    pub epochs: usize,
    pub shards: usize,
    pub seed: u64,
    pub hash_bits: Option<u32>,
    /// Half-width of the uniform initialization interval.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Softmax,
            dim: 10,
            reg_user: 1e-4,
            reg_item: 1e-4,
            lr0: 0.05,
            anneal: 0.9,
            epochs: 10,
            shards: 1,
            seed: 0,
            hash_bits: None,
            init_scale: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        let fail = |msg: String| Err(Error::Config(msg));
        if self.dim == 0 {
            return fail("dim must be at least 1".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return fail(format!("learning rate must be positive, got {}", self.lr0));
        }
        if !(self.anneal > 0.0 && self.anneal <= 1.0) {
            return fail(format!("anneal must be in (0, 1], got {}", self.anneal));
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.shards == 0 {
            return fail("shards must be at least 1".into());
        }
        if !(self.reg_user >= 0.0 && self.reg_item >= 0.0) {
            return fail("regularization weights must be non-negative".into());
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return fail("init scale must be finite and non-negative".into());
        }
        Ok(())
    }

    /// Learning rate used during epoch `epoch` (zero based).
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.lr0 * self.anneal.powi(epoch as i32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Regularized full-data objective after each epoch.
    pub objectives: Vec<f64>,
    /// Learning rate used in each epoch.
    pub learning_rates: Vec<f64>,
    pub final_lr: f64,
    pub epoch_seconds: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainingRecords {
    Sessions(Vec<Session>),
    Dyads(Vec<DyadObservation>),
}

/// Records to train on plus the entity universes the model must cover.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub records: TrainingRecords,
    pub users: IndexSet<EntityId>,
    pub items: IndexSet<EntityId>,
}

impl TrainingSet {
    /// Universes are taken from the records.
    pub fn from_sessions(sessions: Vec<Session>) -> Self {
        let mut users = IndexSet::new();
        let mut items = IndexSet::new();
        for s in &sessions {
            users.insert(s.user().to_string());
            items.extend(s.offers().iter().cloned());
        }
        TrainingSet {
            records: TrainingRecords::Sessions(sessions),
            users,
            items,
        }
    }

    pub fn from_dyads(dyads: Vec<DyadObservation>) -> Self {
        let mut users = IndexSet::new();
        let mut items = IndexSet::new();
        for d in &dyads {
            users.insert(d.user.clone());
            items.insert(d.item.clone());
        }
        TrainingSet {
            records: TrainingRecords::Dyads(dyads),
            users,
            items,
        }
    }

    /// Widens the universes, e.g. to the full dataset before a split.
    pub fn with_universe<'a>(
        mut self,
        users: impl IntoIterator<Item = &'a EntityId>,
        items: impl IntoIterator<Item = &'a EntityId>,
    ) -> Self {
        self.users.extend(users.into_iter().cloned());
        self.items.extend(items.into_iter().cloned());
        self
    }

    pub fn len(&self) -> usize {
        match &self.records {
            TrainingRecords::Sessions(s) => s.len(),
            TrainingRecords::Dyads(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> Vec<Record<'_>> {
        match &self.records {
            TrainingRecords::Sessions(s) => s.iter().map(Record::Session).collect(),
            TrainingRecords::Dyads(d) => d.iter().map(Record::Dyad).collect(),
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Shuffling stream for one (epoch, shard) pair.
fn epoch_rng(seed: u64, epoch: usize, shard: usize) -> ChaCha8Rng {
    let s = splitmix64(seed ^ splitmix64(epoch as u64 ^ splitmix64(shard as u64 + 1)));
    ChaCha8Rng::seed_from_u64(s)
}

fn apply_step(
    config: &TrainConfig,
    record: &Compiled,
    store: &mut ParameterStore,
    lr: f64,
) -> Result<()> {
    let g = entity_grads(&config.loss, record, store)?;
    let content_offset = store.content_offset();
    let params = store.params();
    let mut updates: Vec<(usize, f64)> =
        Vec::with_capacity((record.items.len() + 1) * record.user.len() + 1 + g.content.len());
    for (&s, gu) in record.user.iter().zip(&g.user) {
        updates.push((s, -lr * (gu + config.reg_user * params[s])));
    }
    for (slots, gi) in record.items.iter().zip(&g.items) {
        for (&s, gv) in slots.iter().zip(gi) {
            updates.push((s, -lr * (gv + config.reg_item * params[s])));
        }
    }
    if let Some(s) = record.threshold {
        updates.push((s, -lr * g.threshold));
    }
    for (k, gm) in g.content.iter().enumerate() {
        updates.push((content_offset + k, -lr * gm));
    }
    let params = store.params_mut();
    for (s, delta) in updates {
        params[s] += delta;
    }
    Ok(())
}

/// One SGD update on a single record.
pub fn sgd_step(
    record: Record<'_>,
    store: &mut ParameterStore,
    config: &TrainConfig,
    lr: f64,
) -> Result<()> {
    if lr.is_nan() || lr <= 0.0 {
        return Err(Error::config(format!("learning rate must be positive, got {lr}")));
    }
    let compiled = compile(&config.loss, record, store, None)?;
    apply_step(config, &compiled, store, lr)
}

fn run_epoch<R: Rng>(
    compiled: &[Compiled],
    store: &mut ParameterStore,
    config: &TrainConfig,
    lr: f64,
    rng: &mut R,
) -> Result<()> {
    let mut order: Vec<usize> = (0..compiled.len()).collect();
    order.shuffle(rng);
    for k in order {
        apply_step(config, &compiled[k], store, lr)?;
    }
    Ok(())
}

/// Visits every record once in a shuffled order.
pub fn train_epoch<R: Rng>(
    records: &[Record<'_>],
    store: &mut ParameterStore,
    config: &TrainConfig,
    lr: f64,
    rng: &mut R,
) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Empty("no records to train on".into()));
    }
    let compiled = compile_all(config, records, store, None)?;
    run_epoch(&compiled, store, config, lr, rng)
}

fn compile_all(
    config: &TrainConfig,
    records: &[Record<'_>],
    store: &ParameterStore,
    features: Option<&ContentFeatures>,
) -> Result<Vec<Compiled>> {
    records
        .iter()
        .map(|r| compile(&config.loss, *r, store, features))
        .collect()
}

fn squared_norms(store: &ParameterStore, ids: &IndexSet<EntityId>, user: bool) -> Result<f64> {
    let mut total = 0.0;
    for id in ids {
        let v = if user {
            store.user_factor(id)?
        } else {
            store.item_factor(id)?
        };
        total += v.iter().map(|x| x * x).sum::<f64>();
    }
    Ok(total)
}

fn objective_compiled(
    compiled: &[Compiled],
    store: &ParameterStore,
    config: &TrainConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for c in compiled {
        total += utility_grad(&config.loss, c, store)?.loss;
    }
    total += config.reg_user * squared_norms(store, store.users(), true)?;
    total += config.reg_item * squared_norms(store, store.items(), false)?;
    Ok(total)
}

/// Sum of record losses plus `λ_U Σ‖φ_u‖² + λ_I Σ‖φ_i‖²` over the store's
/// known entities.
pub fn objective(
    records: &[Record<'_>],
    store: &ParameterStore,
    config: &TrainConfig,
) -> Result<f64> {
    let compiled = compile_all(config, records, store, None)?;
    objective_compiled(&compiled, store, config)
}

fn prepare(
    set: &TrainingSet,
    config: &TrainConfig,
    features: Option<&ContentFeatures>,
) -> Result<(ParameterStore, Vec<Compiled>)> {
    config.validate()?;
    if set.is_empty() {
        return Err(Error::Empty("no records to train on".into()));
    }
    let store_config = StoreConfig {
        dim: config.dim,
        scale: config.init_scale,
        seed: config.seed,
        hash_bits: config.hash_bits,
        thresholds: config.loss.needs_thresholds(),
        content: features.map(|f| (f.user_dim(), f.item_dim())),
    };
    let store = ParameterStore::init(set.users.iter().cloned(), set.items.iter().cloned(), &store_config)?;
    let compiled = compile_all(config, &set.records(), &store, features)?;
    Ok((store, compiled))
}

fn train_prepared(
    mut store: ParameterStore,
    compiled: &[Compiled],
    config: &TrainConfig,
) -> Result<(ParameterStore, TrainReport)> {
    let mut report = TrainReport {
        objectives: Vec::with_capacity(config.epochs),
        learning_rates: Vec::with_capacity(config.epochs),
        final_lr: config.lr0,
        epoch_seconds: Vec::with_capacity(config.epochs),
    };
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = config.learning_rate(epoch);
        let mut rng = epoch_rng(config.seed, epoch, 0);
        run_epoch(compiled, &mut store, config, lr, &mut rng)?;
        report.objectives.push(objective_compiled(compiled, &store, config)?);
        report.learning_rates.push(lr);
        report.final_lr = lr;
        report.epoch_seconds.push(started.elapsed().as_secs_f64());
    }
    Ok((store, report))
}

/// Sequential training for `config.epochs` epochs.
pub fn train(set: &TrainingSet, config: &TrainConfig) -> Result<(ParameterStore, TrainReport)> {
    let (store, compiled) = prepare(set, config, None)?;
    train_prepared(store, &compiled, config)
}

/// Sequential training with the bilinear content term; the content matrix
/// is learned jointly with the factors, without weight decay.
pub fn train_with_content(
    set: &TrainingSet,
    features: &ContentFeatures,
    config: &TrainConfig,
) -> Result<(ParameterStore, TrainReport)> {
    let (store, compiled) = prepare(set, config, Some(features))?;
    train_prepared(store, &compiled, config)
}

/// Element-wise mean of parameter copies with identical layout, summed in
/// slice order.
pub fn average_stores(copies: &[ParameterStore]) -> Result<ParameterStore> {
    let first = copies
        .first()
        .ok_or_else(|| Error::Empty("no parameter copies to average".into()))?;
    if copies.iter().any(|c| !c.same_layout(first)) {
        return Err(Error::Shape("parameter copies differ in layout".into()));
    }
    let mut out = first.clone();
    let count = copies.len() as f64;
    let params = out.params_mut();
    for (j, v) in params.iter_mut().enumerate() {
        let mut sum = 0.0;
        for c in copies {
            sum += c.params()[j];
        }
        *v = sum / count;
    }
    Ok(out)
}

/// Data-parallel training: records are cut into `config.shards` contiguous
/// blocks, each block runs one epoch on a private copy of the parameters,
/// and the copies are averaged after every epoch.
pub fn sharded_train(
    set: &TrainingSet,
    config: &TrainConfig,
) -> Result<(ParameterStore, TrainReport)> {
    config.validate()?;
    if config.shards > set.len() {
        return Err(Error::config(format!(
            "{} shards requested for {} records",
            config.shards,
            set.len()
        )));
    }
    let (mut master, compiled) = prepare(set, config, None)?;
    let n = compiled.len();
    let base = n / config.shards;
    let extra = n % config.shards;
    let mut blocks = Vec::with_capacity(config.shards);
    let mut start = 0;
    for s in 0..config.shards {
        let len = base + usize::from(s < extra);
        blocks.push(&compiled[start..start + len]);
        start += len;
    }

    let mut report = TrainReport {
        objectives: Vec::with_capacity(config.epochs),
        learning_rates: Vec::with_capacity(config.epochs),
        final_lr: config.lr0,
        epoch_seconds: Vec::with_capacity(config.epochs),
    };
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = config.learning_rate(epoch);
        let copies = blocks
            .par_iter()
            .enumerate()
            .map(|(s, block)| {
                let mut copy = master.clone();
                let mut rng = epoch_rng(config.seed, epoch, s);
                run_epoch(block, &mut copy, config, lr, &mut rng)?;
                Ok(copy)
            })
            .collect::<Result<Vec<_>>>()?;
        master = average_stores(&copies)?;
        report.objectives.push(objective_compiled(&compiled, &master, config)?);
        report.learning_rates.push(lr);
        report.final_lr = lr;
        report.epoch_seconds.push(started.elapsed().as_secs_f64());
    }
    Ok((master, report))
}

/// Dispatches to [`train`] or [`sharded_train`] on `config.shards`.
pub fn fit(set: &TrainingSet, config: &TrainConfig) -> Result<(ParameterStore, TrainReport)> {
    if config.shards > 1 {
        sharded_train(set, config)
    } else {
        train(set, config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParamKind;
    use crate::objectives::{softmax_grad, GradientAccumulator};

    fn session(user: &str, offers: &[&str], choice: &str) -> Session {
        Session::single_choice(user, offers.iter().copied(), choice).unwrap()
    }

    fn small_store(seed: u64) -> ParameterStore {
        let mut cfg = StoreConfig::new(3, 0.5, seed);
        cfg.thresholds = true;
        ParameterStore::init(["u", "v"], ["a", "b", "c", "d"], &cfg).unwrap()
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { epochs: 0, ..ok.clone() },
            TrainConfig { lr0: 0.0, ..ok.clone() },
            TrainConfig { anneal: 0.0, ..ok.clone() },
            TrainConfig { anneal: 1.5, ..ok.clone() },
            TrainConfig { reg_user: -1.0, ..ok.clone() },
            TrainConfig { shards: 0, ..ok.clone() },
            TrainConfig { dim: 0, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig {
            lr0: 0.1,
            anneal: 0.9,
            ..Default::default()
        };
        let lrs: Vec<f64> = (0..3).map(|e| cfg.learning_rate(e)).collect();
        for (got, want) in lrs.iter().zip([0.1, 0.09, 0.081]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn inactive_hinge_without_decay_leaves_store_unchanged() {
        let mut store = ParameterStore::zeroed(["u"], ["a", "b"], &StoreConfig::new(1, 0.0, 0)).unwrap();
        store.set_user_factor("u", &[1.0]).unwrap();
        store.set_item_factor("a", &[3.0]).unwrap();
        let before = store.clone();
        let cfg = TrainConfig {
            loss: LossKind::hinge(),
            reg_user: 0.0,
            reg_item: 0.0,
            ..Default::default()
        };
        let s = session("u", &["a", "b"], "a");
        sgd_step((&s).into(), &mut store, &cfg, 0.5).unwrap();
        for (x, y) in store.params().iter().zip(before.params()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn pure_weight_decay() {
        let mut store = ParameterStore::zeroed(["u"], ["a", "b", "z"], &StoreConfig::new(2, 0.0, 0)).unwrap();
        store.set_user_factor("u", &[1.0, 0.5]).unwrap();
        store.set_item_factor("a", &[4.0, 0.0]).unwrap();
        store.set_item_factor("b", &[-0.5, 1.0]).unwrap();
        store.set_item_factor("z", &[7.0, 7.0]).unwrap();
        let before = store.clone();
        let cfg = TrainConfig {
            loss: LossKind::hinge(),
            reg_user: 1.0,
            reg_item: 1.0,
            ..Default::default()
        };
        // margin = 4.0 - (-0.25) = 4.25, far beyond 1
        let s = session("u", &["a", "b"], "a");
        sgd_step((&s).into(), &mut store, &cfg, 0.1).unwrap();
        for id in ["a", "b"] {
            let want: Vec<f64> = before.item_factor(id).unwrap().iter().map(|v| v * 0.9).collect();
            let got = store.item_factor(id).unwrap();
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
        let got = store.user_factor("u").unwrap();
        assert!((got[0] - 0.9).abs() < 1e-12 && (got[1] - 0.45).abs() < 1e-12);
        assert_eq!(store.item_factor("z").unwrap(), vec![7.0, 7.0]);
    }

    /// Independent re-derivation of one update from the analytic gradient.
    fn oracle_update(
        store: &ParameterStore,
        grad: &GradientAccumulator,
        s: &Session,
        lr: f64,
        reg_user: f64,
        reg_item: f64,
    ) -> ParameterStore {
        let mut out = store.clone();
        let k = store.dim();
        let pu = store.user_factor(s.user()).unwrap();
        let gu = grad.vector(ParamKind::UserFactor, s.user(), k);
        let nu: Vec<f64> = (0..k).map(|c| pu[c] - lr * (gu[c] + reg_user * pu[c])).collect();
        out.set_user_factor(s.user(), &nu).unwrap();
        for i in s.offers() {
            let pi = store.item_factor(i).unwrap();
            let gi = grad.vector(ParamKind::ItemFactor, i, k);
            let ni: Vec<f64> = (0..k).map(|c| pi[c] - lr * (gi[c] + reg_item * pi[c])).collect();
            out.set_item_factor(i, &ni).unwrap();
        }
        out
    }

    #[test]
    fn softmax_step_matches_oracle() {
        let store = small_store(17);
        let s = session("u", &["b", "d", "a"], "d");
        let cfg = TrainConfig {
            loss: LossKind::Softmax,
            reg_user: 0.01,
            reg_item: 0.02,
            ..Default::default()
        };
        let grad = softmax_grad(&s, &store).unwrap();
        let want = oracle_update(&store, &grad, &s, 0.3, 0.01, 0.02);
        let mut got = store.clone();
        sgd_step((&s).into(), &mut got, &cfg, 0.3).unwrap();
        for (x, y) in got.params().iter().zip(want.params()) {
            assert!((x - y).abs() < 1e-12);
        }
        // untouched entities
        assert_eq!(got.user_factor("v").unwrap(), store.user_factor("v").unwrap());
        assert_eq!(got.item_factor("c").unwrap(), store.item_factor("c").unwrap());
    }

    #[test]
    fn threshold_moves_for_extended_losses() {
        let store = small_store(3);
        let s = Session::new("u", vec!["a".into(), "b".into()], vec![]).unwrap();
        let cfg = TrainConfig {
            loss: LossKind::SoftmaxExt,
            ..Default::default()
        };
        let mut after = store.clone();
        sgd_step((&s).into(), &mut after, &cfg, 0.5).unwrap();
        // no-response pushes the threshold up
        assert!(after.threshold("u").unwrap() > store.threshold("u").unwrap());
        assert_eq!(after.threshold("v").unwrap(), store.threshold("v").unwrap());
    }

    fn fixture() -> TrainingSet {
        let items = ["a", "b", "c", "d", "e", "f"];
        let mut sessions = Vec::new();
        for u in 0..10 {
            for t in 0..5 {
                let offers: Vec<&str> = (0..3).map(|j| items[(u + t + 2 * j) % 6]).collect();
                let choice = offers[(u + t) % 3];
                sessions.push(session(&format!("u{}", u % 4), &offers, choice));
            }
        }
        TrainingSet::from_sessions(sessions)
    }

    #[test]
    fn epoch_is_deterministic() {
        let set = fixture();
        let cfg = TrainConfig {
            dim: 3,
            init_scale: 0.1,
            ..Default::default()
        };
        let (a, ra) = train(&set, &cfg).unwrap();
        let (b, rb) = train(&set, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.objectives, rb.objectives);
    }

    #[test]
    fn train_epoch_with_same_seed_is_reproducible() {
        let set = fixture();
        let records = set.records();
        let cfg = TrainConfig::default();
        let base = ParameterStore::init(
            set.users.iter().cloned(),
            set.items.iter().cloned(),
            &StoreConfig::new(10, 0.1, 5),
        )
        .unwrap();
        let mut a = base.clone();
        let mut b = base.clone();
        train_epoch(&records, &mut a, &cfg, 0.05, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        train_epoch(&records, &mut b, &cfg, 0.05, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, base);
        assert!(train_epoch(&[], &mut a, &cfg, 0.05, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn report_shapes() {
        let set = fixture();
        let cfg = TrainConfig {
            epochs: 4,
            ..Default::default()
        };
        let (_, report) = train(&set, &cfg).unwrap();
        assert_eq!(report.objectives.len(), 4);
        assert_eq!(report.learning_rates.len(), 4);
        assert_eq!(report.final_lr, cfg.learning_rate(3));
    }

    #[test]
    fn averaging_identical_copies_is_identity() {
        let store = small_store(9);
        let avg = average_stores(&[store.clone(), store.clone()]).unwrap();
        assert_eq!(avg, store);
        let avg = average_stores(&[store.clone(), store.clone(), store.clone()]).unwrap();
        for (a, b) in avg.params().iter().zip(store.params()) {
            assert!((a - b).abs() <= 1e-15 * b.abs());
        }
        let other = ParameterStore::init(["x"], ["y"], &StoreConfig::new(3, 0.1, 1)).unwrap();
        assert!(average_stores(&[store, other]).is_err());
    }

    #[test]
    fn too_many_shards_rejected() {
        let set = fixture();
        let cfg = TrainConfig {
            shards: set.len() + 1,
            ..Default::default()
        };
        assert!(matches!(sharded_train(&set, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn single_shard_matches_sequential() {
        let set = fixture();
        let cfg = TrainConfig {
            dim: 4,
            epochs: 3,
            init_scale: 0.1,
            ..Default::default()
        };
        let (a, _) = train(&set, &cfg).unwrap();
        let (b, _) = sharded_train(&set, &cfg).unwrap();
        let bits = |s: &ParameterStore| s.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn content_matrix_is_learned() {
        let set = fixture();
        let mut feats = ContentFeatures::new(1, 2);
        for u in &set.users {
            feats.insert_user(u.clone(), vec![1.0]).unwrap();
        }
        for (k, i) in set.items.iter().enumerate() {
            feats.insert_item(i.clone(), vec![1.0, k as f64 / 6.0]).unwrap();
        }
        let cfg = TrainConfig {
            dim: 2,
            epochs: 3,
            ..Default::default()
        };
        let (store, report) = train_with_content(&set, &feats, &cfg).unwrap();
        assert!(store.content_matrix().unwrap().iter().any(|v| *v != 0.0));
        assert!(report.objectives.iter().all(|o| o.is_finite()));
    }
}
