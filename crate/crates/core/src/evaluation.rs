//! Offline top-n ranking metrics, online click prediction and score
//! histograms.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{EntityId, ParameterStore, Session};
use crate::objectives::sigmoid;

/// Ordering on entity ids: numeric when both parse as integers, otherwise
/// lexicographic, with numeric ids first.
pub fn compare_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredItem {
    pub item: EntityId,
    pub score: f64,
}

fn by_score_then_id(a: &ScoredItem, b: &ScoredItem) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| compare_ids(&a.item, &b.item))
}

/// The `n` highest-utility candidates, best first; ties go to the smaller id.
pub fn rank_top_n(
    store: &ParameterStore,
    user: &str,
    candidates: &[EntityId],
    n: usize,
) -> Result<Vec<ScoredItem>> {
    if n == 0 {
        return Err(Error::config("n must be at least 1"));
    }
    if candidates.is_empty() {
        return Err(Error::Empty("no candidate items".into()));
    }
    let mut scored = candidates
        .iter()
        .map(|i| {
            Ok(ScoredItem {
                item: i.clone(),
                score: store.utility(user, i)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if n < scored.len() {
        scored.select_nth_unstable_by(n - 1, by_score_then_id);
        scored.truncate(n);
    }
    scored.sort_by(by_score_then_id);
    Ok(scored)
}

/// One evaluated user: the model's ranked list and the relevant items.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Query {
    pub ranked: Vec<EntityId>,
    pub relevant: BTreeSet<EntityId>,
}

/// Mean of a per-user metric over users with non-empty ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricValue {
    pub value: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

fn hits(q: &Query, n: usize) -> usize {
    q.ranked
        .iter()
        .take(n)
        .filter(|i| q.relevant.contains(*i))
        .count()
}

fn mean_over(queries: &[Query], per_user: impl Fn(&Query) -> f64) -> MetricValue {
    let mut total = 0.0;
    let mut evaluated = 0;
    for q in queries {
        if q.relevant.is_empty() {
            continue;
        }
        total += per_user(q);
        evaluated += 1;
    }
    MetricValue {
        value: if evaluated == 0 {
            0.0
        } else {
            total / evaluated as f64
        },
        evaluated,
        skipped: queries.len() - evaluated,
    }
}

/// Mean precision of the top-n lists: `|top-n ∩ truth| / n`.
pub fn ap_at_n(queries: &[Query], n: usize) -> MetricValue {
    mean_over(queries, |q| hits(q, n) as f64 / n as f64)
}

/// Mean recall of the top-n lists: `|top-n ∩ truth| / |truth|`.
pub fn ar_at_n(queries: &[Query], n: usize) -> MetricValue {
    mean_over(queries, |q| hits(q, n) as f64 / q.relevant.len() as f64)
}

/// Binary-gain nDCG with discount `log2(p + 1)` at 1-based position `p`.
pub fn ndcg_at_n(queries: &[Query], n: usize) -> MetricValue {
    mean_over(queries, |q| {
        let dcg: f64 = q
            .ranked
            .iter()
            .take(n)
            .enumerate()
            .filter(|(_, i)| q.relevant.contains(*i))
            .map(|(p, _)| 1.0 / ((p + 2) as f64).log2())
            .sum();
        let ideal: f64 = (0..q.relevant.len().min(n))
            .map(|p| 1.0 / ((p + 2) as f64).log2())
            .sum();
        dcg / ideal
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub ap: f64,
    pub ar: f64,
    pub ndcg: f64,
    pub n: usize,
    pub users_evaluated: usize,
    pub online_accuracy: Option<f64>,
    pub histogram: Option<Histogram>,
}

impl EvalReport {
    /// `key=value` lines for humans.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let n = self.n;
        if self.users_evaluated > 0 {
            let _ = writeln!(out, "ap@{n}={}", self.ap);
            let _ = writeln!(out, "ar@{n}={}", self.ar);
            let _ = writeln!(out, "ndcg@{n}={}", self.ndcg);
            let _ = writeln!(out, "users_evaluated={}", self.users_evaluated);
        }
        if let Some(acc) = self.online_accuracy {
            let _ = writeln!(out, "online_accuracy={acc}");
        }
        out
    }

    /// One tab-separated `metric<TAB>value...` line for machines.
    pub fn to_tsv(&self) -> String {
        let fields: Vec<String> = self
            .to_key_value()
            .lines()
            .map(|l| l.replacen('=', "\t", 1))
            .collect();
        format!("{}\n", fields.join("\t"))
    }
}

/// Offline top-n evaluation.
///
/// Ground truth is each user's set of test decisions. Candidates are
/// `universe`, minus the user's training positives when `exclude` is given.
pub fn evaluate_offline(
    store: &ParameterStore,
    truth: &BTreeMap<EntityId, Vec<EntityId>>,
    universe: &[EntityId],
    exclude: Option<&BTreeMap<EntityId, Vec<EntityId>>>,
    n: usize,
) -> Result<EvalReport> {
    let queries = truth
        .par_iter()
        .map(|(user, relevant)| {
            let seen: HashSet<&str> = exclude
                .and_then(|e| e.get(user))
                .map(|v| v.iter().map(String::as_str).collect())
                .unwrap_or_default();
            let candidates: Vec<EntityId> = universe
                .iter()
                .filter(|i| !seen.contains(i.as_str()))
                .cloned()
                .collect();
            let ranked = if candidates.is_empty() {
                Vec::new()
            } else {
                rank_top_n(store, user, &candidates, n)?
                    .into_iter()
                    .map(|s| s.item)
                    .collect()
            };
            Ok(Query {
                ranked,
                relevant: relevant.iter().cloned().collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ap = ap_at_n(&queries, n);
    Ok(EvalReport {
        ap: ap.value,
        ar: ar_at_n(&queries, n).value,
        ndcg: ndcg_at_n(&queries, n).value,
        n,
        users_evaluated: ap.evaluated,
        ..Default::default()
    })
}

/// What the model predicts the user does in a session.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Prediction {
    Item(EntityId),
    NoResponse,
}

/// Highest-utility offer (ties to the smaller id), or no response when the
/// store has thresholds and the user's threshold exceeds every utility.
pub fn predict_choice(store: &ParameterStore, session: &Session) -> Result<Prediction> {
    let best = rank_top_n(store, session.user(), session.offers(), 1)?
        .pop()
        .expect("non-empty offers");
    if store.has_thresholds() && store.threshold(session.user())? > best.score {
        return Ok(Prediction::NoResponse);
    }
    Ok(Prediction::Item(best.item))
}

/// Fraction of sessions whose outcome the argmax predictor gets right.
pub fn online_accuracy(store: &ParameterStore, sessions: &[Session]) -> Result<f64> {
    if sessions.is_empty() {
        return Err(Error::Empty("no sessions to evaluate".into()));
    }
    let mut correct = 0usize;
    for s in sessions {
        let truth = match s.decisions() {
            [one] => Prediction::Item(one.clone()),
            [] if store.has_thresholds() => Prediction::NoResponse,
            [] => {
                return Err(Error::WrongLoss {
                    loss: "online",
                    reason: "no-response session without action thresholds".into(),
                })
            }
            _ => {
                return Err(Error::DegenerateSession(
                    "online evaluation needs exactly one decision per session".into(),
                ))
            }
        };
        if predict_choice(store, s)? == truth {
            correct += 1;
        }
    }
    Ok(correct as f64 / sessions.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreTransform {
    Raw,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    /// `(lower bound, count)` for each equal-width bucket.
    pub buckets: Vec<(f64, usize)>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.buckets.iter().map(|(_, c)| c).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket_low,count\n");
        for (low, count) in &self.buckets {
            let _ = writeln!(out, "{low},{count}");
        }
        out
    }
}

/// Transformed scores of the given dyads.
pub fn transformed_scores(
    store: &ParameterStore,
    dyads: &[(EntityId, EntityId)],
    transform: ScoreTransform,
) -> Result<Vec<f64>> {
    dyads
        .iter()
        .map(|(u, i)| {
            let r = store.utility(u, i)?;
            Ok(match transform {
                ScoreTransform::Raw => r,
                ScoreTransform::Sigmoid => sigmoid(r),
            })
        })
        .collect()
}

/// Equal-width histogram of transformed scores. Sigmoid scores are bucketed
/// over `[0, 1]`, raw scores over their observed range.
pub fn score_histogram(
    store: &ParameterStore,
    dyads: &[(EntityId, EntityId)],
    transform: ScoreTransform,
    buckets: usize,
) -> Result<Histogram> {
    if buckets < 2 {
        return Err(Error::config("a histogram needs at least 2 buckets"));
    }
    if dyads.is_empty() {
        return Err(Error::Empty("no dyads to score".into()));
    }
    let scores = transformed_scores(store, dyads, transform)?;
    let (lo, hi) = match transform {
        ScoreTransform::Sigmoid => (0.0, 1.0),
        ScoreTransform::Raw => scores
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s))),
    };
    let width = if hi > lo { (hi - lo) / buckets as f64 } else { 1.0 };
    let mut counts = vec![0usize; buckets];
    for s in scores {
        let k = (((s - lo) / width).floor().max(0.0) as usize).min(buckets - 1);
        counts[k] += 1;
    }
    Ok(Histogram {
        buckets: counts
            .into_iter()
            .enumerate()
            .map(|(k, c)| (lo + k as f64 * width, c))
            .collect(),
    })
}

/// Share of dyads whose sigmoid score exceeds 0.5, i.e. predicted positive.
pub fn fraction_predicted_positive(
    store: &ParameterStore,
    dyads: &[(EntityId, EntityId)],
) -> Result<f64> {
    if dyads.is_empty() {
        return Err(Error::Empty("no dyads to score".into()));
    }
    let scores = transformed_scores(store, dyads, ScoreTransform::Sigmoid)?;
    Ok(scores.iter().filter(|s| **s > 0.5).count() as f64 / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StoreConfig;

    fn store_1d(items: &[(&str, f64)]) -> ParameterStore {
        let mut s = ParameterStore::zeroed(
            ["u"],
            items.iter().map(|(i, _)| i.to_string()),
            &StoreConfig::new(1, 0.0, 0),
        )
        .unwrap();
        s.set_user_factor("u", &[1.0]).unwrap();
        for (i, r) in items {
            s.set_item_factor(i, &[*r]).unwrap();
        }
        s
    }

    fn ids(v: &[&str]) -> Vec<EntityId> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn ranking_order_and_ties() {
        let store = store_1d(&[("1", 0.5), ("2", 3.0), ("3", -1.0), ("4", 2.0)]);
        let top = rank_top_n(&store, "u", &ids(&["1", "2", "3", "4"]), 3).unwrap();
        let order: Vec<&str> = top.iter().map(|s| s.item.as_str()).collect();
        assert_eq!(order, ["2", "4", "1"]);

        let flat = store_1d(&[("10", 0.0), ("9", 0.0), ("2", 0.0), ("30", 0.0)]);
        let top = rank_top_n(&flat, "u", &ids(&["30", "10", "9", "2"]), 2).unwrap();
        let order: Vec<&str> = top.iter().map(|s| s.item.as_str()).collect();
        assert_eq!(order, ["2", "9"]);

        assert!(rank_top_n(&store, "u", &[], 1).is_err());
        assert!(rank_top_n(&store, "u", &ids(&["1"]), 0).is_err());
        assert_eq!(rank_top_n(&store, "u", &ids(&["3"]), 5).unwrap().len(), 1);
    }

    fn q(ranked: &[&str], relevant: &[&str]) -> Query {
        Query {
            ranked: ids(ranked),
            relevant: relevant.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn metric_examples() {
        let perfect = [q(&["a", "b", "c", "d", "e"], &["a", "b", "c", "d", "e"])];
        assert_eq!(ap_at_n(&perfect, 5).value, 1.0);
        let disjoint = [q(&["a", "b", "c", "d", "e"], &["z"])];
        assert_eq!(ap_at_n(&disjoint, 5).value, 0.0);
        let first = [q(&["a", "b", "c", "d", "e"], &["a"])];
        assert!((ap_at_n(&first, 5).value - 0.2).abs() < 1e-15);
        assert_eq!(ar_at_n(&first, 5).value, 1.0);
        assert_eq!(ndcg_at_n(&first, 5).value, 1.0);

        let half = [q(&["a", "x", "b", "y", "z"], &["a", "b", "c", "d"])];
        assert_eq!(ar_at_n(&half, 5).value, 0.5);

        let second = [q(&["x", "a", "y"], &["a"])];
        assert!((ndcg_at_n(&second, 3).value - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((ndcg_at_n(&second, 3).value - 0.63093).abs() < 1e-5);
    }

    #[test]
    fn empty_truth_is_skipped() {
        let qs = [q(&["a"], &[]), q(&["a"], &["a"])];
        let m = ap_at_n(&qs, 1);
        assert_eq!((m.value, m.evaluated, m.skipped), (1.0, 1, 1));
    }

    #[test]
    fn online_examples() {
        let store = store_1d(&[("a", 3.0), ("b", 1.0), ("c", 2.0)]);
        let s = Session::single_choice("u", ["a", "b", "c"], "a").unwrap();
        assert_eq!(online_accuracy(&store, &[s]).unwrap(), 1.0);
        let s = Session::single_choice("u", ["a", "b", "c"], "b").unwrap();
        assert_eq!(online_accuracy(&store, std::slice::from_ref(&s)).unwrap(), 0.0);
        let none = Session::new("u", ids(&["a", "b"]), vec![]).unwrap();
        assert!(online_accuracy(&store, &[none]).is_err());
        assert!(online_accuracy(&store, &[]).is_err());
    }

    #[test]
    fn online_with_thresholds_predicts_no_response() {
        let mut cfg = StoreConfig::new(1, 0.0, 0);
        cfg.thresholds = true;
        let mut store = ParameterStore::zeroed(["u"], ["a", "b"], &cfg).unwrap();
        store.set_user_factor("u", &[1.0]).unwrap();
        store.set_item_factor("a", &[0.5]).unwrap();
        store.set_item_factor("b", &[-0.5]).unwrap();
        store.set_threshold("u", 2.0).unwrap();
        let none = Session::new("u", ids(&["a", "b"]), vec![]).unwrap();
        let click = Session::single_choice("u", ["a", "b"], "a").unwrap();
        assert_eq!(online_accuracy(&store, &[none.clone(), click]).unwrap(), 0.5);
        assert_eq!(predict_choice(&store, &none).unwrap(), Prediction::NoResponse);
    }

    #[test]
    fn histogram_examples() {
        let store = store_1d(&[("a", 0.0), ("b", 0.0)]);
        let mut zero = store.clone();
        zero.set_user_factor("u", &[0.0]).unwrap();
        let dyads = vec![
            ("u".to_string(), "a".to_string()),
            ("u".to_string(), "b".to_string()),
        ];
        let h = score_histogram(&zero, &dyads, ScoreTransform::Sigmoid, 10).unwrap();
        assert_eq!(h.total(), 2);
        let (low, count) = h.buckets[5];
        assert!((low - 0.5).abs() < 1e-12);
        assert_eq!(count, 2);
        assert!(score_histogram(&store, &dyads, ScoreTransform::Raw, 1).is_err());
        assert!(score_histogram(&store, &[], ScoreTransform::Raw, 4).is_err());
        assert!(h.to_csv().starts_with("bucket_low,count\n0,0\n"));
    }

    #[test]
    fn report_formats() {
        let r = EvalReport {
            ap: 0.5,
            ar: 0.25,
            ndcg: 0.75,
            n: 5,
            users_evaluated: 3,
            ..Default::default()
        };
        assert_eq!(
            r.to_key_value(),
            "ap@5=0.5\nar@5=0.25\nndcg@5=0.75\nusers_evaluated=3\n"
        );
        assert_eq!(
            r.to_tsv(),
            "ap@5\t0.5\tar@5\t0.25\tndcg@5\t0.75\tusers_evaluated\t3\n"
        );
    }

    #[test]
    fn id_ordering() {
        assert_eq!(compare_ids("9", "10"), Ordering::Less);
        assert_eq!(compare_ids("b", "a"), Ordering::Greater);
        assert_eq!(compare_ids("7", "a"), Ordering::Less);
    }
}
