//! Dataset ingestion, pseudo offer-set simulation and splitting.
//!
//! Dyadic files hold one `user<TAB>item` pair per line. Session files hold
//! `user<TAB>offer,offer,...<TAB>decision,...` with `-` for an empty
//! decision set. Blank lines and lines starting with `#` are ignored.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use indexmap::IndexSet;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{EntityId, Session};
use crate::objectives::DyadObservation;
use crate::trainer::{TrainingRecords, TrainingSet};

pub mod synth;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DyadicDataset {
    pub dyads: Vec<(EntityId, EntityId)>,
    pub users: IndexSet<EntityId>,
    pub items: IndexSet<EntityId>,
}

impl DyadicDataset {
    /// Builds a dataset, rejecting duplicate pairs.
    pub fn new(dyads: Vec<(EntityId, EntityId)>) -> Result<Self> {
        let mut ds = DyadicDataset::default();
        let mut seen = HashSet::new();
        for (k, (u, i)) in dyads.into_iter().enumerate() {
            if !seen.insert((u.clone(), i.clone())) {
                return Err(Error::Validation {
                    line: k + 1,
                    msg: format!("duplicate dyad ({u}, {i})"),
                });
            }
            ds.users.insert(u.clone());
            ds.items.insert(i.clone());
            ds.dyads.push((u, i));
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.dyads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dyads.is_empty()
    }

    /// Positive items per user.
    pub fn positives(&self) -> HashMap<&str, HashSet<&str>> {
        let mut out: HashMap<&str, HashSet<&str>> = HashMap::new();
        for (u, i) in &self.dyads {
            out.entry(u.as_str()).or_default().insert(i.as_str());
        }
        out
    }

    /// Observations labelled `label` for the positives-only CF baselines.
    pub fn observations(&self, label: f64) -> Vec<DyadObservation> {
        self.dyads
            .iter()
            .map(|(u, i)| DyadObservation::new(u.clone(), i.clone(), label))
            .collect()
    }

    pub fn to_training_set(&self, label: f64) -> TrainingSet {
        TrainingSet {
            records: TrainingRecords::Dyads(self.observations(label)),
            users: self.users.clone(),
            items: self.items.clone(),
        }
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for (u, i) in &self.dyads {
            writeln!(w, "{u}\t{i}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SessionDataset {
    pub sessions: Vec<Session>,
    pub users: IndexSet<EntityId>,
    pub items: IndexSet<EntityId>,
}

impl SessionDataset {
    pub fn new(sessions: Vec<Session>) -> Self {
        let mut users = IndexSet::new();
        let mut items = IndexSet::new();
        for s in &sessions {
            users.insert(s.user().to_string());
            items.extend(s.offers().iter().cloned());
        }
        SessionDataset {
            sessions,
            users,
            items,
        }
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    /// Distinct `(user, decision)` pairs in first-seen order.
    pub fn positive_dyads(&self) -> DyadicDataset {
        let mut seen = HashSet::new();
        let mut ds = DyadicDataset {
            users: self.users.clone(),
            items: self.items.clone(),
            ..Default::default()
        };
        for s in &self.sessions {
            for d in s.decisions() {
                if seen.insert((s.user(), d.as_str())) {
                    ds.dyads.push((s.user().to_string(), d.clone()));
                }
            }
        }
        ds
    }

    pub fn to_training_set(&self) -> TrainingSet {
        TrainingSet {
            records: TrainingRecords::Sessions(self.sessions.clone()),
            users: self.users.clone(),
            items: self.items.clone(),
        }
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.sessions {
            let decisions = if s.decisions().is_empty() {
                "-".to_string()
            } else {
                s.decisions().join(",")
            };
            writeln!(w, "{}\t{}\t{}", s.user(), s.offers().join(","), decisions)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }
}

fn content_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(k, line)| match line {
            Err(e) => Some(Err(Error::Io(e))),
            Ok(l) => {
                let l = l.trim_end_matches(['\r', '\n']).to_string();
                if l.trim().is_empty() || l.starts_with('#') {
                    None
                } else {
                    Some(Ok((k + 1, l)))
                }
            }
        })
}

fn token(line: usize, raw: &str, what: &str) -> Result<EntityId> {
    if raw.is_empty() || raw.chars().any(char::is_whitespace) {
        return Err(Error::Parse {
            line,
            msg: format!("invalid {what} id `{raw}`"),
        });
    }
    Ok(raw.to_string())
}

pub fn read_dyadic<R: BufRead>(reader: R) -> Result<DyadicDataset> {
    let mut ds = DyadicDataset::default();
    let mut first_seen: HashMap<(EntityId, EntityId), usize> = HashMap::new();
    for entry in content_lines(reader) {
        let (line, text) = entry?;
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line,
                msg: format!("expected `user<TAB>item`, found {} field(s)", fields.len()),
            });
        }
        let u = token(line, fields[0], "user")?;
        let i = token(line, fields[1], "item")?;
        if let Some(prev) = first_seen.insert((u.clone(), i.clone()), line) {
            return Err(Error::Validation {
                line,
                msg: format!("duplicate dyad ({u}, {i}), first seen at line {prev}"),
            });
        }
        ds.users.insert(u.clone());
        ds.items.insert(i.clone());
        ds.dyads.push((u, i));
    }
    Ok(ds)
}

pub fn parse_dyadic(path: impl AsRef<Path>) -> Result<DyadicDataset> {
    read_dyadic(BufReader::new(File::open(path)?))
}

fn id_list(line: usize, raw: &str, what: &str) -> Result<Vec<EntityId>> {
    raw.split(',').map(|t| token(line, t, what)).collect()
}

pub fn read_sessions<R: BufRead>(reader: R) -> Result<SessionDataset> {
    let mut sessions = Vec::new();
    for entry in content_lines(reader) {
        let (line, text) = entry?;
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line,
                msg: format!(
                    "expected `user<TAB>offers<TAB>decisions`, found {} field(s)",
                    fields.len()
                ),
            });
        }
        let user = token(line, fields[0], "user")?;
        let offers = id_list(line, fields[1], "offer")?;
        let decisions = if fields[2] == "-" {
            Vec::new()
        } else {
            id_list(line, fields[2], "decision")?
        };
        let session = Session::new(user, offers, decisions).map_err(|e| Error::Validation {
            line,
            msg: e.to_string(),
        })?;
        sessions.push(session);
    }
    Ok(SessionDataset::new(sessions))
}

pub fn parse_sessions(path: impl AsRef<Path>) -> Result<SessionDataset> {
    read_sessions(BufReader::new(File::open(path)?))
}

/// Turns every positive dyad into a session whose offer set is the positive
/// item plus `m` items the user never acted on anywhere in `dyads`, sampled
/// uniformly without replacement. Offer order is shuffled.
pub fn simulate_contexts(dyads: &DyadicDataset, m: usize, seed: u64) -> Result<SessionDataset> {
    let positives = dyads.positives();
    let mut pools: HashMap<&str, Vec<&EntityId>> = HashMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sessions = Vec::with_capacity(dyads.len());
    for (u, chosen) in &dyads.dyads {
        let pool = pools.entry(u.as_str()).or_insert_with(|| {
            let pos = &positives[u.as_str()];
            dyads
                .items
                .iter()
                .filter(|i| !pos.contains(i.as_str()))
                .collect()
        });
        if pool.len() < m {
            return Err(Error::InsufficientNegatives {
                user: u.clone(),
                needed: m,
                available: pool.len(),
            });
        }
        let mut offers: Vec<EntityId> = Vec::with_capacity(m + 1);
        offers.push(chosen.clone());
        for k in index::sample(&mut rng, pool.len(), m) {
            offers.push(pool[k].clone());
        }
        offers.shuffle(&mut rng);
        sessions.push(Session::new(u.clone(), offers, vec![chosen.clone()])?);
    }
    Ok(SessionDataset {
        sessions,
        users: dyads.users.clone(),
        items: dyads.items.clone(),
    })
}

/// Split proportions for train, validation and test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, valid: f64, test: f64) -> Result<Self> {
        let r = SplitRatios { train, valid, test };
        let all = [train, valid, test];
        if all.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::config(format!(
                "split ratios must be non-negative, got {all:?}"
            )));
        }
        if ((train + valid + test) - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "split ratios must sum to 1, got {all:?}"
            )));
        }
        Ok(r)
    }

    fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let train = ((n as f64) * self.train).round() as usize;
        let train = train.min(n);
        let valid = (((n as f64) * self.valid).round() as usize).min(n - train);
        (train, valid, n - train - valid)
    }
}

/// Seeded record-level partition into train, validation and test.
pub fn split_records<T: Clone>(
    records: &[T],
    ratios: SplitRatios,
    seed: u64,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (n_train, n_valid, _) = ratios.sizes(records.len());
    let pick = |idx: &[usize]| idx.iter().map(|&k| records[k].clone()).collect::<Vec<T>>();
    (
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_valid]),
        pick(&order[n_train + n_valid..]),
    )
}

/// Splits sessions; every part keeps the full universes.
pub fn split_sessions(
    ds: &SessionDataset,
    ratios: SplitRatios,
    seed: u64,
) -> [SessionDataset; 3] {
    let (a, b, c) = split_records(&ds.sessions, ratios, seed);
    [a, b, c].map(|sessions| SessionDataset {
        sessions,
        users: ds.users.clone(),
        items: ds.items.clone(),
    })
}

/// Splits dyads; every part keeps the full universes.
pub fn split_dyadic(ds: &DyadicDataset, ratios: SplitRatios, seed: u64) -> [DyadicDataset; 3] {
    let (a, b, c) = split_records(&ds.dyads, ratios, seed);
    [a, b, c].map(|dyads| DyadicDataset {
        dyads,
        users: ds.users.clone(),
        items: ds.items.clone(),
    })
}

/// Decisions per user, the ground truth for offline ranking evaluation.
pub fn decisions_by_user(sessions: &[Session]) -> BTreeMap<EntityId, Vec<EntityId>> {
    let mut out: BTreeMap<EntityId, Vec<EntityId>> = BTreeMap::new();
    for s in sessions {
        let entry = out.entry(s.user().to_string()).or_default();
        for d in s.decisions() {
            if !entry.contains(d) {
                entry.push(d.clone());
            }
        }
    }
    out.retain(|_, v| !v.is_empty());
    out
}
