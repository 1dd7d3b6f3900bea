//! Line-oriented text checkpoints.
//!
//! ```text
//! ccf-model v1 dim=<k> hash_bits=<b|none>
//! U <id> <k reals>
//! I <id> <k reals>
//! T <id> <real>
//! M <row> <n reals>
//! H <offset> <reals...>
//! ```
//!
//! Reals are written with 17 significant digits, which round-trips every
//! `f64` exactly. `H` lines only appear for hashed stores and carry the raw
//! hash table in chunks, so parameters reachable only by unknown entities
//! survive a save/load cycle.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use indexmap::IndexSet;

use crate::error::{Error, Result};
use crate::model::{EntityId, ParamKind, ParameterStore, StoreConfig};

const MAGIC: &str = "ccf-model";
const VERSION: &str = "v1";
const TABLE_CHUNK: usize = 64;

fn write_reals<W: Write>(w: &mut W, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        write!(w, " {v:.16e}")?;
    }
    writeln!(w)
}

impl ParameterStore {
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let bits = self
            .hash_bits()
            .map_or_else(|| "none".to_string(), |b| b.to_string());
        writeln!(w, "{MAGIC} {VERSION} dim={} hash_bits={bits}", self.dim())?;
        for u in self.users() {
            write!(w, "U {u}")?;
            write_reals(&mut w, &self.user_factor(u)?)?;
        }
        for i in self.items() {
            write!(w, "I {i}")?;
            write_reals(&mut w, &self.item_factor(i)?)?;
        }
        if self.has_thresholds() {
            for u in self.users() {
                writeln!(w, "T {u} {:.16e}", self.threshold(u)?)?;
            }
        }
        if let (Some((m, n)), Some(matrix)) = (self.content_shape(), self.content_matrix()) {
            for row in 0..m {
                write!(w, "M {row}")?;
                write_reals(&mut w, &matrix[row * n..(row + 1) * n])?;
            }
        }
        if let Some(bits) = self.hash_bits() {
            let table = &self.params()[..1usize << bits];
            for (chunk_no, chunk) in table.chunks(TABLE_CHUNK).enumerate() {
                write!(w, "H {}", chunk_no * TABLE_CHUNK)?;
                write_reals(&mut w, chunk)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path)?;
        self.write_checkpoint(BufWriter::new(file))
    }

    pub fn read_checkpoint<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Checkpoint("empty checkpoint".into()))?;
        let header = header?;
        let (dim, hash_bits) = parse_header(&header)?;

        let mut users: Vec<(EntityId, Vec<f64>)> = Vec::new();
        let mut items: Vec<(EntityId, Vec<f64>)> = Vec::new();
        let mut thresholds: Vec<(EntityId, f64)> = Vec::new();
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut table: Vec<(usize, Vec<f64>)> = Vec::new();

        for (no, line) in lines {
            let line = line?;
            let line_no = no + 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(' ');
            let tag = fields.next().unwrap_or_default();
            let key = fields.next().ok_or_else(|| Error::Parse {
                line: line_no,
                msg: "missing identifier".into(),
            })?;
            let values = fields
                .map(|f| {
                    f.parse::<f64>().map_err(|e| Error::Parse {
                        line: line_no,
                        msg: format!("bad real `{f}`: {e}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            let index = |key: &str| {
                key.parse::<usize>().map_err(|e| Error::Parse {
                    line: line_no,
                    msg: format!("bad index `{key}`: {e}"),
                })
            };
            match tag {
                "U" | "I" => {
                    if values.len() != dim {
                        return Err(Error::Checkpoint(format!(
                            "line {line_no}: factor has {} components, header says dim={dim}",
                            values.len()
                        )));
                    }
                    let target = if tag == "U" { &mut users } else { &mut items };
                    target.push((key.to_string(), values));
                }
                "T" => {
                    if values.len() != 1 {
                        return Err(Error::Parse {
                            line: line_no,
                            msg: "threshold line needs exactly one value".into(),
                        });
                    }
                    thresholds.push((key.to_string(), values[0]));
                }
                "M" => rows.push((index(key)?, values)),
                "H" => table.push((index(key)?, values)),
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("unknown record tag `{other}`"),
                    })
                }
            }
        }

        let content = if rows.is_empty() {
            None
        } else {
            rows.sort_by_key(|(r, _)| *r);
            let n = rows[0].1.len();
            if n == 0
                || rows.iter().enumerate().any(|(k, (r, v))| *r != k || v.len() != n)
            {
                return Err(Error::Checkpoint(
                    "content matrix rows are incomplete or ragged".into(),
                ));
            }
            Some((rows.len(), n))
        };

        let config = StoreConfig {
            dim,
            scale: 0.0,
            seed: 0,
            hash_bits,
            thresholds: !thresholds.is_empty(),
            content,
        };
        let user_ids: IndexSet<EntityId> = users.iter().map(|(u, _)| u.clone()).collect();
        let item_ids: IndexSet<EntityId> = items.iter().map(|(i, _)| i.clone()).collect();
        if user_ids.len() != users.len() || item_ids.len() != items.len() {
            return Err(Error::Checkpoint("duplicate entity in checkpoint".into()));
        }
        let mut store = if hash_bits.is_some() {
            let mut s = ParameterStore::with_layout(IndexSet::new(), IndexSet::new(), &config)?;
            for u in &user_ids {
                s.register(ParamKind::UserFactor, u)?;
            }
            for i in &item_ids {
                s.register(ParamKind::ItemFactor, i)?;
            }
            s
        } else {
            ParameterStore::with_layout(user_ids, item_ids, &config)?
        };

        if table.is_empty() {
            for (u, v) in &users {
                store.set_user_factor(u, v)?;
            }
            for (i, v) in &items {
                store.set_item_factor(i, v)?;
            }
            for (u, t) in &thresholds {
                store.set_threshold(u, *t)?;
            }
        } else {
            if !store.is_hashed() {
                return Err(Error::Checkpoint("hash table in a dense checkpoint".into()));
            }
            let len = 1usize << hash_bits.expect("hashed");
            let params = store.params_mut();
            for (offset, chunk) in table {
                if offset + chunk.len() > len {
                    return Err(Error::Checkpoint(format!(
                        "hash table chunk at {offset} exceeds table length {len}"
                    )));
                }
                params[offset..offset + chunk.len()].copy_from_slice(&chunk);
            }
        }
        if let Some((_, n)) = content {
            let flat: Vec<f64> = rows.into_iter().flat_map(|(_, v)| v).collect();
            debug_assert_eq!(flat.len() % n, 0);
            store.set_content_matrix(&flat)?;
        }
        Ok(store)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        Self::read_checkpoint(BufReader::new(file))
    }
}

fn parse_header(header: &str) -> Result<(usize, Option<u32>)> {
    let bad = || Error::Checkpoint(format!("bad header `{header}`"));
    let mut parts = header.trim_end().split(' ');
    if parts.next() != Some(MAGIC) {
        return Err(bad());
    }
    match parts.next() {
        Some(VERSION) => {}
        Some(v) => return Err(Error::Checkpoint(format!("unsupported version `{v}`"))),
        None => return Err(bad()),
    }
    let dim = parts
        .next()
        .and_then(|p| p.strip_prefix("dim="))
        .and_then(|d| d.parse::<usize>().ok())
        .ok_or_else(bad)?;
    let bits = match parts.next().and_then(|p| p.strip_prefix("hash_bits=")) {
        Some("none") => None,
        Some(b) => Some(b.parse::<u32>().map_err(|_| bad())?),
        None => return Err(bad()),
    };
    Ok((dim, bits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ContentFeatures;

    fn roundtrip(store: &ParameterStore) -> ParameterStore {
        let mut buf = Vec::new();
        store.write_checkpoint(&mut buf).unwrap();
        ParameterStore::read_checkpoint(buf.as_slice()).unwrap()
    }

    #[test]
    fn dense_roundtrip_is_lossless() {
        let mut cfg = StoreConfig::new(3, 1.0, 8);
        cfg.thresholds = true;
        cfg.content = Some((2, 3));
        let mut store = ParameterStore::init(["u1", "u2"], ["a", "b", "c"], &cfg).unwrap();
        store.set_threshold("u2", -0.123_456_789_012_345_68).unwrap();
        store
            .set_content_matrix(&[1.0 / 3.0, 2.0, -7e-300, 1e300, 0.1, -0.2])
            .unwrap();
        let back = roundtrip(&store);
        assert_eq!(back, store);
        let mut feats = ContentFeatures::new(2, 3);
        feats.insert_user("u1", vec![1.0, 2.0]).unwrap();
        feats.insert_item("a", vec![0.5, 0.5, 0.5]).unwrap();
        assert_eq!(
            back.utility_with_content(&feats, "u1", "a").unwrap(),
            store.utility_with_content(&feats, "u1", "a").unwrap()
        );
    }

    #[test]
    fn hashed_roundtrip_keeps_table() {
        let mut cfg = StoreConfig::new(4, 0.5, 2);
        cfg.hash_bits = Some(9);
        cfg.thresholds = true;
        let store = ParameterStore::init(["u1", "u2"], ["a", "b"], &cfg).unwrap();
        let back = roundtrip(&store);
        assert_eq!(back, store);
        assert_eq!(
            back.utility("stranger", "unseen").unwrap(),
            store.utility("stranger", "unseen").unwrap()
        );
    }

    #[test]
    fn header_format() {
        let store = ParameterStore::zeroed(["u"], ["i"], &StoreConfig::new(2, 0.0, 0)).unwrap();
        let mut buf = Vec::new();
        store.write_checkpoint(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("ccf-model v1 dim=2 hash_bits=none"));
        assert_eq!(
            lines.next(),
            Some("U u 0.0000000000000000e0 0.0000000000000000e0")
        );
    }

    #[test]
    fn rejects_malformed_checkpoints() {
        for text in [
            "",
            "ccf-model v2 dim=2 hash_bits=none\n",
            "nope v1 dim=2 hash_bits=none\n",
            "ccf-model v1 dim=2 hash_bits=none\nU u 1.0\n",
            "ccf-model v1 dim=1 hash_bits=none\nU u 1.0\nI i x\n",
            "ccf-model v1 dim=1 hash_bits=none\nU u 1.0\nI i 1.0\nZ q 1\n",
            "ccf-model v1 dim=1 hash_bits=none\nU u 1.0\nU u 1.0\nI i 1.0\n",
        ] {
            assert!(ParameterStore::read_checkpoint(text.as_bytes()).is_err(), "{text:?}");
        }
    }
}
