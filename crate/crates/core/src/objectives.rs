//! Session- and dyad-level losses with analytic gradients.
//!
//! Every loss depends on the parameters only through the utilities of the
//! offered items (and the user's action threshold for the extended models).
//! The `*_utility_grad` functions compute the loss and its derivative with
//! respect to those utilities; the chain rule then gives
//! `∂/∂φ_i = l'(r_ui) φ_u` and `∂/∂φ_u = Σ_i l'(r_ui) φ_i`.
//!
//! Regularization is not part of any loss value here; the trainer applies
//! weight decay inside its update.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{bilinear, ContentFeatures, EntityId, ParamKind, ParameterStore, Session};

/// Slope of the logistic surrogate for the Heaviside step in hinge gradients.
pub const DEFAULT_SMOOTH_SLOPE: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossKind {
    /// Multinomial logit over the offer set.
    Softmax,
    /// Margin between the choice and the mean non-choice.
    Hinge { smooth_slope: f64 },
    /// Multinomial logit with a per-user no-response alternative.
    SoftmaxExt,
    /// Hinge with action thresholds; no-response slacks weighted by `tradeoff_c`.
    HingeExt { tradeoff_c: f64, smooth_slope: f64 },
    /// Squared error on observed dyads.
    CfL2,
    /// Logistic loss on observed dyads with labels in {-1, +1}.
    CfLogistic,
}

impl LossKind {
    pub fn hinge() -> Self {
        LossKind::Hinge {
            smooth_slope: DEFAULT_SMOOTH_SLOPE,
        }
    }

    pub fn hinge_ext(tradeoff_c: f64) -> Self {
        LossKind::HingeExt {
            tradeoff_c,
            smooth_slope: DEFAULT_SMOOTH_SLOPE,
        }
    }

    /// Parses the command-line name of a loss.
    pub fn from_name(name: &str, tradeoff_c: f64, smooth_slope: f64) -> Result<Self> {
        let kind = match name {
            "softmax" => LossKind::Softmax,
            "hinge" => LossKind::Hinge { smooth_slope },
            "softmax-ext" => LossKind::SoftmaxExt,
            "hinge-ext" => LossKind::HingeExt {
                tradeoff_c,
                smooth_slope,
            },
            "l2" => LossKind::CfL2,
            "logistic" => LossKind::CfLogistic,
            other => return Err(Error::config(format!("unknown loss `{other}`"))),
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Softmax => "softmax",
            LossKind::Hinge { .. } => "hinge",
            LossKind::SoftmaxExt => "softmax-ext",
            LossKind::HingeExt { .. } => "hinge-ext",
            LossKind::CfL2 => "l2",
            LossKind::CfLogistic => "logistic",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossKind::Hinge { smooth_slope } if smooth_slope.is_nan() || smooth_slope <= 0.0 => {
                Err(Error::config("smoothing slope must be positive"))
            }
            LossKind::HingeExt {
                tradeoff_c,
                smooth_slope,
            } => {
                if smooth_slope.is_nan() || smooth_slope <= 0.0 {
                    Err(Error::config("smoothing slope must be positive"))
                } else if tradeoff_c.is_nan() || tradeoff_c < 0.0 {
                    Err(Error::config("trade-off constant C must be non-negative"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Losses trained on single dyads rather than sessions.
    pub fn is_dyadic(&self) -> bool {
        matches!(self, LossKind::CfL2 | LossKind::CfLogistic)
    }

    pub fn needs_thresholds(&self) -> bool {
        matches!(self, LossKind::SoftmaxExt | LossKind::HingeExt { .. })
    }
}

/// One observed dyadic response `(u, i, y_ui)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DyadObservation {
    pub user: EntityId,
    pub item: EntityId,
    pub label: f64,
}

impl DyadObservation {
    pub fn new(user: impl Into<EntityId>, item: impl Into<EntityId>, label: f64) -> Self {
        DyadObservation {
            user: user.into(),
            item: item.into(),
            label,
        }
    }
}

/// A training record of either shape.
#[derive(Clone, Copy, Debug)]
pub enum Record<'a> {
    Session(&'a Session),
    Dyad(&'a DyadObservation),
}

impl<'a> From<&'a Session> for Record<'a> {
    fn from(s: &'a Session) -> Self {
        Record::Session(s)
    }
}

impl<'a> From<&'a DyadObservation> for Record<'a> {
    fn from(d: &'a DyadObservation) -> Self {
        Record::Dyad(d)
    }
}

impl Record<'_> {
    pub fn user(&self) -> &str {
        match self {
            Record::Session(s) => s.user(),
            Record::Dyad(d) => &d.user,
        }
    }

    fn items(&self) -> &[EntityId] {
        match self {
            Record::Session(s) => s.offers(),
            Record::Dyad(d) => std::slice::from_ref(&d.item),
        }
    }
}

/// Identifies one scalar parameter by role rather than by buffer position.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Slot {
    pub kind: ParamKind,
    pub entity: EntityId,
    pub component: usize,
}

/// Sparse gradient of one record's loss. Absent slots have zero gradient.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientAccumulator {
    entries: BTreeMap<Slot, f64>,
}

impl GradientAccumulator {
    pub fn add(&mut self, kind: ParamKind, entity: &str, component: usize, value: f64) {
        *self
            .entries
            .entry(Slot {
                kind,
                entity: entity.to_string(),
                component,
            })
            .or_insert(0.0) += value;
    }

    pub fn get(&self, kind: ParamKind, entity: &str, component: usize) -> f64 {
        self.entries
            .get(&Slot {
                kind,
                entity: entity.to_string(),
                component,
            })
            .copied()
            .unwrap_or(0.0)
    }

    pub fn contains_entity(&self, kind: ParamKind, entity: &str) -> bool {
        self.entries
            .keys()
            .any(|s| s.kind == kind && s.entity == entity)
    }

    /// Gradient of a whole factor vector (zeros where absent).
    pub fn vector(&self, kind: ParamKind, entity: &str, dim: usize) -> Vec<f64> {
        (0..dim).map(|c| self.get(kind, entity, c)).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Slot, f64)> {
        self.entries.iter().map(|(s, v)| (s, *v))
    }
}

/// Loss of one record and its derivatives with respect to the utilities of
/// the offered items and the action threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct UtilityGrad {
    pub loss: f64,
    pub d_utility: Vec<f64>,
    pub d_threshold: f64,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Multinomial logit probabilities over an offer set.
pub fn softmax_probs(utilities: &[f64]) -> Vec<f64> {
    let max = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = utilities.iter().map(|r| (r - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Probability that the item at `chosen` is picked from the offer set.
pub fn softmax_prob(utilities: &[f64], chosen: usize) -> f64 {
    softmax_probs(utilities)[chosen]
}

/// Choice probabilities with a no-response alternative of utility `threshold`.
/// Returns the per-item probabilities and the no-response probability.
pub fn softmax_ext_probs(utilities: &[f64], threshold: f64) -> (Vec<f64>, f64) {
    let max = utilities
        .iter()
        .copied()
        .fold(threshold, f64::max);
    let exps: Vec<f64> = utilities.iter().map(|r| (r - max).exp()).collect();
    let none = (threshold - max).exp();
    let total = none + exps.iter().sum::<f64>();
    (exps.into_iter().map(|e| e / total).collect(), none / total)
}

/// The soft-thresholded slack whose derivative is `sigmoid(slope * x)`:
/// `ln(1 + e^{slope x}) / slope`. It converges to `max(0, x)` as the slope grows.
pub fn smoothed_slack(x: f64, smooth_slope: f64) -> f64 {
    softplus(smooth_slope * x) / smooth_slope
}

fn require_choice(loss: &'static str, decisions: &[usize]) -> Result<()> {
    if decisions.is_empty() {
        return Err(Error::WrongLoss {
            loss,
            reason: "session has no decision; use the extended loss for no-response sessions"
                .into(),
        });
    }
    Ok(())
}

fn require_competitors(len: usize) -> Result<()> {
    if len < 2 {
        return Err(Error::DegenerateSession(
            "a margin loss needs at least one non-chosen offer".into(),
        ));
    }
    Ok(())
}

fn mean_of_others(utilities: &[f64], chosen: usize) -> f64 {
    let total: f64 = utilities.iter().sum();
    (total - utilities[chosen]) / (utilities.len() - 1) as f64
}

/// Softmax loss `log Σ_O exp(r) - r_{i*}` summed over the decisions.
pub fn softmax_utility_grad(utilities: &[f64], decisions: &[usize]) -> Result<UtilityGrad> {
    require_choice("softmax", decisions)?;
    let lse = log_sum_exp(utilities.iter().copied());
    let probs = softmax_probs(utilities);
    let mut d = vec![0.0; utilities.len()];
    let mut loss = 0.0;
    for &c in decisions {
        loss += lse - utilities[c];
        for (g, p) in d.iter_mut().zip(&probs) {
            *g += p;
        }
        d[c] -= 1.0;
    }
    Ok(UtilityGrad {
        loss,
        d_utility: d,
        d_threshold: 0.0,
    })
}

/// Hinge slack `max(0, 1 - (r_{i*} - mean of the others))` summed over the
/// decisions; the gradient replaces the step function by `sigmoid(slope x)`.
pub fn hinge_utility_grad(
    utilities: &[f64],
    decisions: &[usize],
    smooth_slope: f64,
) -> Result<UtilityGrad> {
    require_choice("hinge", decisions)?;
    require_competitors(utilities.len())?;
    let others = (utilities.len() - 1) as f64;
    let mut d = vec![0.0; utilities.len()];
    let mut loss = 0.0;
    for &c in decisions {
        let x = 1.0 - (utilities[c] - mean_of_others(utilities, c));
        loss += x.max(0.0);
        let h = sigmoid(smooth_slope * x);
        for (j, g) in d.iter_mut().enumerate() {
            *g += if j == c { -h } else { h / others };
        }
    }
    Ok(UtilityGrad {
        loss,
        d_utility: d,
        d_threshold: 0.0,
    })
}

/// Negative log-likelihood of the observed outcome under the logit model
/// with a no-response alternative of utility `threshold`.
pub fn softmax_ext_utility_grad(
    utilities: &[f64],
    decisions: &[usize],
    threshold: f64,
) -> Result<UtilityGrad> {
    let lse = log_sum_exp(utilities.iter().copied().chain(std::iter::once(threshold)));
    let (probs, p_none) = softmax_ext_probs(utilities, threshold);
    if decisions.is_empty() {
        return Ok(UtilityGrad {
            loss: lse - threshold,
            d_utility: probs,
            d_threshold: p_none - 1.0,
        });
    }
    let mut d = vec![0.0; utilities.len()];
    let mut d_threshold = 0.0;
    let mut loss = 0.0;
    for &c in decisions {
        loss += lse - utilities[c];
        for (g, p) in d.iter_mut().zip(&probs) {
            *g += p;
        }
        d[c] -= 1.0;
        d_threshold += p_none;
    }
    Ok(UtilityGrad {
        loss,
        d_utility: d,
        d_threshold,
    })
}

/// Hinge loss with action thresholds.
///
/// Responded sessions pay `max(0, 1 - (r_{i*} - r̄ - θ))` per decision.
/// No-response sessions pay `C · Σ_i max(0, 1 - (θ - r_i))`.
pub fn hinge_ext_utility_grad(
    utilities: &[f64],
    decisions: &[usize],
    threshold: f64,
    tradeoff_c: f64,
    smooth_slope: f64,
) -> Result<UtilityGrad> {
    let mut d = vec![0.0; utilities.len()];
    let mut d_threshold = 0.0;
    let mut loss = 0.0;
    if decisions.is_empty() {
        for (r, g) in utilities.iter().zip(d.iter_mut()) {
            let x = 1.0 - (threshold - r);
            loss += tradeoff_c * x.max(0.0);
            let h = tradeoff_c * sigmoid(smooth_slope * x);
            *g += h;
            d_threshold -= h;
        }
    } else {
        require_competitors(utilities.len())?;
        let others = (utilities.len() - 1) as f64;
        for &c in decisions {
            let x = 1.0 - (utilities[c] - mean_of_others(utilities, c) - threshold);
            loss += x.max(0.0);
            let h = sigmoid(smooth_slope * x);
            for (j, g) in d.iter_mut().enumerate() {
                *g += if j == c { -h } else { h / others };
            }
            d_threshold += h;
        }
    }
    Ok(UtilityGrad {
        loss,
        d_utility: d,
        d_threshold,
    })
}

/// `(y - r)^2` for labels in {0, 1}.
pub fn cf_l2_utility_grad(utility: f64, label: f64) -> Result<UtilityGrad> {
    if label != 0.0 && label != 1.0 {
        return Err(Error::WrongLoss {
            loss: "l2",
            reason: format!("label {label} is not in {{0, 1}}"),
        });
    }
    let diff = utility - label;
    Ok(UtilityGrad {
        loss: diff * diff,
        d_utility: vec![2.0 * diff],
        d_threshold: 0.0,
    })
}

/// `ln(1 + exp(-y r))` for labels in {-1, +1}.
pub fn cf_logistic_utility_grad(utility: f64, label: f64) -> Result<UtilityGrad> {
    if label != 1.0 && label != -1.0 {
        return Err(Error::WrongLoss {
            loss: "logistic",
            reason: format!("label {label} is not in {{-1, +1}}"),
        });
    }
    let margin = label * utility;
    Ok(UtilityGrad {
        loss: softplus(-margin),
        d_utility: vec![-label * sigmoid(-margin)],
        d_threshold: 0.0,
    })
}

/// A record resolved against a store's parameter layout.
#[derive(Clone, Debug)]
pub(crate) struct Compiled {
    pub(crate) user: Vec<usize>,
    pub(crate) items: Vec<Vec<usize>>,
    decisions: Vec<usize>,
    label: f64,
    pub(crate) threshold: Option<usize>,
    content: Option<ContentTerms>,
}

#[derive(Clone, Debug)]
struct ContentTerms {
    xu: Vec<f64>,
    xi: Vec<Vec<f64>>,
}

/// Per-entity gradient of one record, in offer order.
#[derive(Clone, Debug)]
pub(crate) struct EntityGrads {
    pub(crate) loss: f64,
    pub(crate) user: Vec<f64>,
    pub(crate) items: Vec<Vec<f64>>,
    pub(crate) threshold: f64,
    /// Row-major gradient of the content matrix; empty when unused.
    pub(crate) content: Vec<f64>,
}

pub(crate) fn compile(
    kind: &LossKind,
    record: Record<'_>,
    store: &ParameterStore,
    features: Option<&ContentFeatures>,
) -> Result<Compiled> {
    kind.validate()?;
    let (decisions, label) = match record {
        Record::Session(s) => {
            if kind.is_dyadic() {
                return Err(Error::WrongLoss {
                    loss: kind.name(),
                    reason: "dyadic loss applied to a session".into(),
                });
            }
            (s.decision_positions(), 0.0)
        }
        Record::Dyad(d) => {
            if !kind.is_dyadic() {
                return Err(Error::WrongLoss {
                    loss: kind.name(),
                    reason: "session loss applied to a single dyad".into(),
                });
            }
            (Vec::new(), d.label)
        }
    };
    let user = store.factor_slots(ParamKind::UserFactor, record.user())?;
    let items = record
        .items()
        .iter()
        .map(|i| store.factor_slots(ParamKind::ItemFactor, i))
        .collect::<Result<Vec<_>>>()?;
    let threshold = if kind.needs_thresholds() {
        Some(store.threshold_slot(record.user())?)
    } else {
        None
    };
    let content = match (features, store.content_shape()) {
        (None, _) => None,
        (Some(_), None) => {
            return Err(Error::config(
                "content features supplied but the store has no content matrix",
            ))
        }
        (Some(f), Some((m, n))) => {
            if (f.user_dim(), f.item_dim()) != (m, n) {
                return Err(Error::Shape(format!(
                    "content matrix is {m}x{n} but features are {}x{}",
                    f.user_dim(),
                    f.item_dim()
                )));
            }
            Some(ContentTerms {
                xu: f.user(record.user())?.to_vec(),
                xi: record
                    .items()
                    .iter()
                    .map(|i| f.item(i).map(<[f64]>::to_vec))
                    .collect::<Result<_>>()?,
            })
        }
    };
    Ok(Compiled {
        user,
        items,
        decisions,
        label,
        threshold,
        content,
    })
}

pub(crate) fn utilities(c: &Compiled, store: &ParameterStore) -> Vec<f64> {
    let matrix = c.content.as_ref().and_then(|_| store.content_matrix());
    c.items
        .iter()
        .enumerate()
        .map(|(k, item)| {
            let mut r = store.dot_slots(&c.user, item);
            if let (Some(ct), Some(m)) = (&c.content, matrix) {
                r += bilinear(&ct.xu, m, &ct.xi[k]);
            }
            r
        })
        .collect()
}

pub(crate) fn utility_grad(
    kind: &LossKind,
    c: &Compiled,
    store: &ParameterStore,
) -> Result<UtilityGrad> {
    let r = utilities(c, store);
    let theta = c.threshold.map(|s| store.params()[s]);
    match *kind {
        LossKind::Softmax => softmax_utility_grad(&r, &c.decisions),
        LossKind::Hinge { smooth_slope } => hinge_utility_grad(&r, &c.decisions, smooth_slope),
        LossKind::SoftmaxExt => {
            softmax_ext_utility_grad(&r, &c.decisions, theta.expect("threshold compiled"))
        }
        LossKind::HingeExt {
            tradeoff_c,
            smooth_slope,
        } => hinge_ext_utility_grad(
            &r,
            &c.decisions,
            theta.expect("threshold compiled"),
            tradeoff_c,
            smooth_slope,
        ),
        LossKind::CfL2 => cf_l2_utility_grad(r[0], c.label),
        LossKind::CfLogistic => cf_logistic_utility_grad(r[0], c.label),
    }
}

pub(crate) fn entity_grads(
    kind: &LossKind,
    c: &Compiled,
    store: &ParameterStore,
) -> Result<EntityGrads> {
    let ug = utility_grad(kind, c, store)?;
    let params = store.params();
    let phi_u: Vec<f64> = c.user.iter().map(|&s| params[s]).collect();
    let mut user = vec![0.0; phi_u.len()];
    let mut items = Vec::with_capacity(c.items.len());
    for (slots, &d) in c.items.iter().zip(&ug.d_utility) {
        for (g, &s) in user.iter_mut().zip(slots) {
            *g += d * params[s];
        }
        items.push(phi_u.iter().map(|p| d * p).collect());
    }
    let content = match &c.content {
        Some(ct) => {
            let n = ct.xi.first().map_or(0, Vec::len);
            let mut g = vec![0.0; ct.xu.len() * n];
            for (xi, &d) in ct.xi.iter().zip(&ug.d_utility) {
                for (a, xa) in ct.xu.iter().enumerate() {
                    for (b, xb) in xi.iter().enumerate() {
                        g[a * n + b] += d * xa * xb;
                    }
                }
            }
            g
        }
        None => Vec::new(),
    };
    Ok(EntityGrads {
        loss: ug.loss,
        user,
        items,
        threshold: ug.d_threshold,
        content,
    })
}

fn to_accumulator(
    record: Record<'_>,
    grads: &EntityGrads,
    has_threshold: bool,
) -> GradientAccumulator {
    let mut acc = GradientAccumulator::default();
    let user = record.user();
    for (c, v) in grads.user.iter().enumerate() {
        acc.add(ParamKind::UserFactor, user, c, *v);
    }
    for (item, g) in record.items().iter().zip(&grads.items) {
        for (c, v) in g.iter().enumerate() {
            acc.add(ParamKind::ItemFactor, item, c, *v);
        }
    }
    if has_threshold {
        acc.add(ParamKind::Threshold, user, 0, grads.threshold);
    }
    for (k, v) in grads.content.iter().enumerate() {
        acc.add(ParamKind::Content, "", k, *v);
    }
    acc
}

/// Loss and sparse gradient of any record under any loss kind.
pub fn loss_and_grad(
    kind: &LossKind,
    record: Record<'_>,
    store: &ParameterStore,
) -> Result<(f64, GradientAccumulator)> {
    loss_and_grad_with_content(kind, record, store, None)
}

/// As [`loss_and_grad`], including the bilinear content term when features are given.
pub fn loss_and_grad_with_content(
    kind: &LossKind,
    record: Record<'_>,
    store: &ParameterStore,
    features: Option<&ContentFeatures>,
) -> Result<(f64, GradientAccumulator)> {
    let c = compile(kind, record, store, features)?;
    let g = entity_grads(kind, &c, store)?;
    let acc = to_accumulator(record, &g, c.threshold.is_some());
    Ok((g.loss, acc))
}

/// Loss value of one record.
pub fn record_loss(kind: &LossKind, record: Record<'_>, store: &ParameterStore) -> Result<f64> {
    let c = compile(kind, record, store, None)?;
    Ok(utility_grad(kind, &c, store)?.loss)
}

pub fn softmax_loss(session: &Session, store: &ParameterStore) -> Result<f64> {
    record_loss(&LossKind::Softmax, session.into(), store)
}

pub fn softmax_grad(session: &Session, store: &ParameterStore) -> Result<GradientAccumulator> {
    Ok(loss_and_grad(&LossKind::Softmax, session.into(), store)?.1)
}

pub fn hinge_loss(session: &Session, store: &ParameterStore) -> Result<f64> {
    record_loss(&LossKind::hinge(), session.into(), store)
}

pub fn hinge_grad(
    session: &Session,
    store: &ParameterStore,
    smooth_slope: f64,
) -> Result<GradientAccumulator> {
    Ok(loss_and_grad(&LossKind::Hinge { smooth_slope }, session.into(), store)?.1)
}

pub fn softmax_ext_loss_grad(
    session: &Session,
    store: &ParameterStore,
) -> Result<(f64, GradientAccumulator)> {
    loss_and_grad(&LossKind::SoftmaxExt, session.into(), store)
}

pub fn hinge_ext_loss_grad(
    session: &Session,
    store: &ParameterStore,
    tradeoff_c: f64,
    smooth_slope: f64,
) -> Result<(f64, GradientAccumulator)> {
    loss_and_grad(
        &LossKind::HingeExt {
            tradeoff_c,
            smooth_slope,
        },
        session.into(),
        store,
    )
}

pub fn cf_l2_loss_grad(
    obs: &DyadObservation,
    store: &ParameterStore,
) -> Result<(f64, GradientAccumulator)> {
    loss_and_grad(&LossKind::CfL2, obs.into(), store)
}

pub fn cf_logistic_loss_grad(
    obs: &DyadObservation,
    store: &ParameterStore,
) -> Result<(f64, GradientAccumulator)> {
    loss_and_grad(&LossKind::CfLogistic, obs.into(), store)
}
