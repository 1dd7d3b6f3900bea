//! Learnable parameters and the utility function.
//!
//! A [`ParameterStore`] keeps every learnable value in one flat `f64` buffer.
//! In dense mode each known user and item owns a contiguous block of `dim`
//! values, followed by one action threshold per user (when enabled) and the
//! row-major content matrix (when enabled). In hashed mode the factors and
//! thresholds of every entity, known or not, are looked up in a single table
//! of `2^bits` values through [`hash_index`]; the content matrix stays dense
//! after the table.

use std::collections::{BTreeSet, HashMap};

use indexmap::IndexSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// External identifier of a user or item.
pub type EntityId = String;

/// Largest supported hash table width.
pub const MAX_HASH_BITS: u32 = 40;

/// Which family of parameters a slot belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamKind {
    UserFactor,
    ItemFactor,
    Threshold,
    /// Entry of the content matrix; the entity id is empty and the component
    /// is `row * n + col`.
    Content,
}

impl ParamKind {
    fn tag(self) -> u8 {
        match self {
            ParamKind::UserFactor => b'U',
            ParamKind::ItemFactor => b'I',
            ParamKind::Threshold => b'T',
            ParamKind::Content => b'M',
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(state: u64, bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(state, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Table position of one parameter component under feature hashing.
///
/// FNV-1a (64 bit) over the byte string `tag ‖ id ‖ 0xFF ‖ component (u32 LE)`,
/// where `tag` is `U`, `I`, `T` or `M`, masked to the low `bits` bits.
/// `0xFF` never occurs in UTF-8 so the encoding is unambiguous.
pub fn hash_index(kind: ParamKind, id: &str, component: u32, bits: u32) -> u64 {
    debug_assert!((1..=MAX_HASH_BITS).contains(&bits));
    let mut h = fnv1a(FNV_OFFSET, &[kind.tag()]);
    h = fnv1a(h, id.as_bytes());
    h = fnv1a(h, &[0xFF]);
    h = fnv1a(h, &component.to_le_bytes());
    h & ((1u64 << bits) - 1)
}

/// Options for [`ParameterStore::init`].
#[derive(Clone, Debug, PartialEq)]
pub struct StoreConfig {
    pub dim: usize,
    /// Half-width of the uniform initialization interval.
    pub scale: f64,
    pub seed: u64,
    pub hash_bits: Option<u32>,
    /// Allocate one action threshold per user.
    pub thresholds: bool,
    /// Shape `(m, n)` of the content matrix, if content features are used.
    pub content: Option<(usize, usize)>,
}

impl StoreConfig {
    pub fn new(dim: usize, scale: f64, seed: u64) -> Self {
        StoreConfig {
            dim,
            scale,
            seed,
            hash_bits: None,
            thresholds: false,
            content: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Layout {
    Dense,
    Hashed { bits: u32 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore {
    dim: usize,
    layout: Layout,
    users: IndexSet<EntityId>,
    items: IndexSet<EntityId>,
    thresholds: bool,
    content: Option<(usize, usize)>,
    params: Vec<f64>,
}

impl ParameterStore {
    /// Allocates parameters for the given universes. Factor components are
    /// drawn i.i.d. uniform in `[-scale, scale]`; thresholds and the content
    /// matrix start at zero.
    pub fn init<U, I>(users: U, items: I, config: &StoreConfig) -> Result<Self>
    where
        U: IntoIterator,
        U::Item: Into<EntityId>,
        I: IntoIterator,
        I::Item: Into<EntityId>,
    {
        if !(config.scale >= 0.0 && config.scale.is_finite()) {
            return Err(Error::config(format!(
                "init scale must be finite and non-negative, got {}",
                config.scale
            )));
        }
        let mut store = Self::zeroed(users, items, config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let factor_len = store.factor_region_len();
        for v in &mut store.params[..factor_len] {
            *v = config.scale * (2.0 * rng.random::<f64>() - 1.0);
        }
        if store.thresholds {
            if let Layout::Hashed { .. } = store.layout {
                let slots: Vec<usize> = store
                    .users
                    .iter()
                    .map(|u| store.hashed_slot(ParamKind::Threshold, u, 0))
                    .collect();
                for s in slots {
                    store.params[s] = 0.0;
                }
            }
        }
        Ok(store)
    }

    /// Same layout as [`init`](Self::init) with every parameter set to zero.
    pub fn zeroed<U, I>(users: U, items: I, config: &StoreConfig) -> Result<Self>
    where
        U: IntoIterator,
        U::Item: Into<EntityId>,
        I: IntoIterator,
        I::Item: Into<EntityId>,
    {
        let users: IndexSet<EntityId> = users.into_iter().map(Into::into).collect();
        let items: IndexSet<EntityId> = items.into_iter().map(Into::into).collect();
        if users.is_empty() {
            return Err(Error::config("user set is empty"));
        }
        if items.is_empty() {
            return Err(Error::config("item set is empty"));
        }
        Self::with_layout(users, items, config)
    }

    pub(crate) fn with_layout(
        users: IndexSet<EntityId>,
        items: IndexSet<EntityId>,
        config: &StoreConfig,
    ) -> Result<Self> {
        if config.dim == 0 {
            return Err(Error::config("latent dimensionality must be at least 1"));
        }
        let layout = match config.hash_bits {
            None => Layout::Dense,
            Some(bits) if (1..=MAX_HASH_BITS).contains(&bits) => Layout::Hashed { bits },
            Some(bits) => {
                return Err(Error::config(format!(
                    "hash bits must be in 1..={MAX_HASH_BITS}, got {bits}"
                )))
            }
        };
        if let Some((m, n)) = config.content {
            if m == 0 || n == 0 {
                return Err(Error::config("content matrix dimensions must be positive"));
            }
        }
        let mut store = ParameterStore {
            dim: config.dim,
            layout,
            users,
            items,
            thresholds: config.thresholds,
            content: config.content,
            params: Vec::new(),
        };
        let len = store.factor_region_len()
            + store.threshold_region_len()
            + config.content.map_or(0, |(m, n)| m * n);
        store.params = vec![0.0; len];
        Ok(store)
    }

    fn factor_region_len(&self) -> usize {
        match self.layout {
            Layout::Dense => (self.users.len() + self.items.len()) * self.dim,
            Layout::Hashed { bits } => 1usize << bits,
        }
    }

    fn threshold_region_len(&self) -> usize {
        match (self.layout, self.thresholds) {
            (Layout::Dense, true) => self.users.len(),
            _ => 0,
        }
    }

    pub(crate) fn content_offset(&self) -> usize {
        self.factor_region_len() + self.threshold_region_len()
    }

    fn hashed_slot(&self, kind: ParamKind, id: &str, component: usize) -> usize {
        match self.layout {
            Layout::Hashed { bits } => hash_index(kind, id, component as u32, bits) as usize,
            Layout::Dense => unreachable!("hashed_slot on dense store"),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hash_bits(&self) -> Option<u32> {
        match self.layout {
            Layout::Dense => None,
            Layout::Hashed { bits } => Some(bits),
        }
    }

    pub fn has_thresholds(&self) -> bool {
        self.thresholds
    }

    /// Shape `(m, n)` of the content matrix, if present.
    pub fn content_shape(&self) -> Option<(usize, usize)> {
        self.content
    }

    pub fn users(&self) -> &IndexSet<EntityId> {
        &self.users
    }

    pub fn items(&self) -> &IndexSet<EntityId> {
        &self.items
    }

    /// The raw parameter buffer.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `true` when both stores have identical layout and entity universes,
    /// so their parameter buffers can be combined element-wise.
    pub fn same_layout(&self, other: &ParameterStore) -> bool {
        self.dim == other.dim
            && self.layout == other.layout
            && self.thresholds == other.thresholds
            && self.content == other.content
            && self.users == other.users
            && self.items == other.items
    }

    /// Buffer positions holding the `dim` components of a factor vector.
    ///
    /// Unknown entities resolve to their hashed slots when hashing is
    /// enabled and fail with [`Error::MissingEntity`] otherwise.
    pub fn factor_slots(&self, kind: ParamKind, id: &str) -> Result<Vec<usize>> {
        match self.layout {
            Layout::Dense => {
                let start = match kind {
                    ParamKind::UserFactor => self.user_ordinal(id)? * self.dim,
                    ParamKind::ItemFactor => (self.users.len() + self.item_ordinal(id)?) * self.dim,
                    _ => return Err(Error::config(format!("{kind:?} is not a factor kind"))),
                };
                Ok((start..start + self.dim).collect())
            }
            Layout::Hashed { .. } => match kind {
                ParamKind::UserFactor | ParamKind::ItemFactor => {
                    Ok((0..self.dim).map(|c| self.hashed_slot(kind, id, c)).collect())
                }
                _ => Err(Error::config(format!("{kind:?} is not a factor kind"))),
            },
        }
    }

    pub fn threshold_slot(&self, user: &str) -> Result<usize> {
        if !self.thresholds {
            return Err(Error::config(
                "action thresholds are not enabled in this parameter store",
            ));
        }
        match self.layout {
            Layout::Dense => Ok(self.factor_region_len() + self.user_ordinal(user)?),
            Layout::Hashed { .. } => Ok(self.hashed_slot(ParamKind::Threshold, user, 0)),
        }
    }

    fn user_ordinal(&self, id: &str) -> Result<usize> {
        self.users.get_index_of(id).ok_or_else(|| Error::MissingEntity {
            kind: "user",
            id: id.to_string(),
        })
    }

    fn item_ordinal(&self, id: &str) -> Result<usize> {
        self.items.get_index_of(id).ok_or_else(|| Error::MissingEntity {
            kind: "item",
            id: id.to_string(),
        })
    }

    fn gather(&self, slots: &[usize]) -> Vec<f64> {
        slots.iter().map(|&s| self.params[s]).collect()
    }

    pub fn user_factor(&self, id: &str) -> Result<Vec<f64>> {
        Ok(self.gather(&self.factor_slots(ParamKind::UserFactor, id)?))
    }

    pub fn item_factor(&self, id: &str) -> Result<Vec<f64>> {
        Ok(self.gather(&self.factor_slots(ParamKind::ItemFactor, id)?))
    }

    pub fn threshold(&self, user: &str) -> Result<f64> {
        Ok(self.params[self.threshold_slot(user)?])
    }

    fn scatter(&mut self, kind: ParamKind, id: &str, values: &[f64]) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::Shape(format!(
                "factor of length {} for a store with dim {}",
                values.len(),
                self.dim
            )));
        }
        let slots = self.factor_slots(kind, id)?;
        for (s, v) in slots.into_iter().zip(values) {
            self.params[s] = *v;
        }
        Ok(())
    }

    pub fn set_user_factor(&mut self, id: &str, values: &[f64]) -> Result<()> {
        self.scatter(ParamKind::UserFactor, id, values)
    }

    pub fn set_item_factor(&mut self, id: &str, values: &[f64]) -> Result<()> {
        self.scatter(ParamKind::ItemFactor, id, values)
    }

    pub fn set_threshold(&mut self, user: &str, value: f64) -> Result<()> {
        let s = self.threshold_slot(user)?;
        self.params[s] = value;
        Ok(())
    }

    /// Row-major content matrix `M`, if present.
    pub fn content_matrix(&self) -> Option<&[f64]> {
        let (m, n) = self.content?;
        let off = self.content_offset();
        Some(&self.params[off..off + m * n])
    }

    pub fn set_content_matrix(&mut self, values: &[f64]) -> Result<()> {
        let (m, n) = self
            .content
            .ok_or_else(|| Error::config("content matrix is not enabled in this store"))?;
        if values.len() != m * n {
            return Err(Error::Shape(format!(
                "content matrix needs {} values, got {}",
                m * n,
                values.len()
            )));
        }
        let off = self.content_offset();
        self.params[off..off + m * n].copy_from_slice(values);
        Ok(())
    }

    /// Multiplies every parameter by `alpha`.
    pub fn scale_all(&mut self, alpha: f64) {
        for v in &mut self.params {
            *v *= alpha;
        }
    }

    pub(crate) fn dot_slots(&self, a: &[usize], b: &[usize]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| self.params[x] * self.params[y])
            .sum()
    }

    /// Latent utility `r(u, i) = φ_u · φ_i`.
    pub fn utility(&self, user: &str, item: &str) -> Result<f64> {
        let u = self.factor_slots(ParamKind::UserFactor, user)?;
        let i = self.factor_slots(ParamKind::ItemFactor, item)?;
        Ok(self.dot_slots(&u, &i))
    }

    /// Utility with the bilinear content term: `φ_u · φ_i + x_uᵀ M x_i`.
    pub fn utility_with_content(
        &self,
        features: &ContentFeatures,
        user: &str,
        item: &str,
    ) -> Result<f64> {
        let (m, n) = self
            .content
            .ok_or_else(|| Error::config("content matrix is not enabled in this store"))?;
        if (m, n) != (features.user_dim(), features.item_dim()) {
            return Err(Error::Shape(format!(
                "content matrix is {m}x{n} but features are {}x{}",
                features.user_dim(),
                features.item_dim()
            )));
        }
        let xu = features.user(user)?;
        let xi = features.item(item)?;
        let matrix = self.content_matrix().expect("content enabled");
        Ok(self.utility(user, item)? + bilinear(xu, matrix, xi))
    }

    /// Sets the known-entity universes without touching values; used by the
    /// checkpoint loader for hashed stores.
    pub(crate) fn register(&mut self, kind: ParamKind, id: &str) -> Result<()> {
        match (self.layout, kind) {
            (Layout::Hashed { .. }, ParamKind::UserFactor) => {
                self.users.insert(id.to_string());
                Ok(())
            }
            (Layout::Hashed { .. }, ParamKind::ItemFactor) => {
                self.items.insert(id.to_string());
                Ok(())
            }
            _ => Err(Error::Checkpoint(format!(
                "cannot register {kind:?} `{id}` on a dense store"
            ))),
        }
    }

    pub(crate) fn is_hashed(&self) -> bool {
        matches!(self.layout, Layout::Hashed { .. })
    }
}

/// `xuᵀ M xi` for a row-major `M` of shape `|xu| × |xi|`.
pub(crate) fn bilinear(xu: &[f64], matrix: &[f64], xi: &[f64]) -> f64 {
    let n = xi.len();
    xu.iter()
        .enumerate()
        .map(|(a, &x)| {
            let row = &matrix[a * n..(a + 1) * n];
            x * row.iter().zip(xi).map(|(m, y)| m * y).sum::<f64>()
        })
        .sum()
}

/// One user–recommender interaction: the items offered and the items acted on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Session {
    user: EntityId,
    offers: Vec<EntityId>,
    decisions: Vec<EntityId>,
}

impl Session {
    /// Validates that the offer set is non-empty and duplicate free and that
    /// every decision is one of the offers.
    pub fn new(
        user: impl Into<EntityId>,
        offers: Vec<EntityId>,
        decisions: Vec<EntityId>,
    ) -> Result<Self> {
        let user = user.into();
        if offers.is_empty() {
            return Err(Error::DegenerateSession(format!(
                "session of user `{user}` has an empty offer set"
            )));
        }
        let mut seen = BTreeSet::new();
        for o in &offers {
            if !seen.insert(o.as_str()) {
                return Err(Error::DegenerateSession(format!(
                    "item `{o}` offered twice to user `{user}`"
                )));
            }
        }
        let mut chosen = BTreeSet::new();
        for d in &decisions {
            if !seen.contains(d.as_str()) {
                return Err(Error::DegenerateSession(format!(
                    "decision `{d}` of user `{user}` is not in the offer set"
                )));
            }
            if !chosen.insert(d.as_str()) {
                return Err(Error::DegenerateSession(format!(
                    "decision `{d}` of user `{user}` listed twice"
                )));
            }
        }
        Ok(Session {
            user,
            offers,
            decisions,
        })
    }

    /// Convenience constructor for the common single-choice session.
    pub fn single_choice<S: Into<EntityId>>(
        user: impl Into<EntityId>,
        offers: impl IntoIterator<Item = S>,
        choice: impl Into<EntityId>,
    ) -> Result<Self> {
        Self::new(
            user,
            offers.into_iter().map(Into::into).collect(),
            vec![choice.into()],
        )
    }

    pub fn user(&self) -> &str {
        &self.user
    }

    pub fn offers(&self) -> &[EntityId] {
        &self.offers
    }

    pub fn decisions(&self) -> &[EntityId] {
        &self.decisions
    }

    pub fn is_no_response(&self) -> bool {
        self.decisions.is_empty()
    }

    /// Offer-set positions of the decisions, in decision order.
    pub fn decision_positions(&self) -> Vec<usize> {
        self.decisions
            .iter()
            .map(|d| {
                self.offers
                    .iter()
                    .position(|o| o == d)
                    .expect("decision validated against offers")
            })
            .collect()
    }
}

/// Observable user and item attributes for the bilinear content term.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContentFeatures {
    user_dim: usize,
    item_dim: usize,
    users: HashMap<EntityId, Vec<f64>>,
    items: HashMap<EntityId, Vec<f64>>,
}

impl ContentFeatures {
    pub fn new(user_dim: usize, item_dim: usize) -> Self {
        ContentFeatures {
            user_dim,
            item_dim,
            ..Default::default()
        }
    }

    pub fn user_dim(&self) -> usize {
        self.user_dim
    }

    pub fn item_dim(&self) -> usize {
        self.item_dim
    }

    pub fn insert_user(&mut self, id: impl Into<EntityId>, x: Vec<f64>) -> Result<()> {
        if x.len() != self.user_dim {
            return Err(Error::Shape(format!(
                "user feature vector has length {}, expected {}",
                x.len(),
                self.user_dim
            )));
        }
        self.users.insert(id.into(), x);
        Ok(())
    }

    pub fn insert_item(&mut self, id: impl Into<EntityId>, x: Vec<f64>) -> Result<()> {
        if x.len() != self.item_dim {
            return Err(Error::Shape(format!(
                "item feature vector has length {}, expected {}",
                x.len(),
                self.item_dim
            )));
        }
        self.items.insert(id.into(), x);
        Ok(())
    }

    pub fn user(&self, id: &str) -> Result<&[f64]> {
        self.users
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingEntity {
                kind: "user features",
                id: id.to_string(),
            })
    }

    pub fn item(&self, id: &str) -> Result<&[f64]> {
        self.items
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingEntity {
                kind: "item features",
                id: id.to_string(),
            })
    }
}
