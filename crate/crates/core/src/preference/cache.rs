//! Persistent cache of reference log-probabilities, keyed by pair id and
//! branch, with a small self-describing binary file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "YLLC"
//! version u32      1
//! count   u64      number of records
//! record  17 bytes pair_id u64, branch u8 (0 chosen / 1 rejected), logp f64
//! ```
//!
//! Records are written in key order and log-probabilities round-trip
//! bit-exactly, so a cache file is a deterministic function of its contents.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::Branch;
use crate::{Error, Result};

const MAGIC: [u8; 4] = *b"YLLC";
const VERSION: u32 = 1;

/// In-memory map of `(pair_id, branch) -> log p`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogProbCache {
    entries: BTreeMap<(u64, u8), f64>,
}

impl LogProbCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts one log-probability; duplicate keys and non-finite values are
    /// rejected rather than silently overwritten.
    pub fn insert(&mut self, pair_id: u64, branch: Branch, logp: f64) -> Result<()> {
        if !logp.is_finite() {
            return Err(Error::invalid(format!(
                "log-probability for pair {pair_id} is not finite"
            )));
        }
        match self.entries.entry((pair_id, branch.to_byte())) {
            Entry::Vacant(slot) => {
                slot.insert(logp);
                Ok(())
            }
            Entry::Occupied(_) => Err(Error::invalid(format!(
                "pair {pair_id} already has a {branch:?} entry"
            ))),
        }
    }

    pub fn get(&self, pair_id: u64, branch: Branch) -> Option<f64> {
        self.entries.get(&(pair_id, branch.to_byte())).copied()
    }

    /// Entries in key order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, Branch, f64)> + '_ {
        self.entries.iter().map(|(&(id, b), &logp)| {
            (id, Branch::from_byte(b).expect("stored branches are valid"), logp)
        })
    }

    /// Serializes the cache. The byte stream depends only on the entries.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (&(pair_id, branch), &logp) in &self.entries {
            out.write_all(&pair_id.to_le_bytes())?;
            out.write_all(&[branch])?;
            out.write_all(&logp.to_le_bytes())?;
        }
        Ok(())
    }

    /// Parses a cache written by [`write_to`](Self::write_to), validating the
    /// header, every record, and that no bytes trail the declared count.
    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        fn take<const N: usize>(input: &mut impl Read, what: &str) -> Result<[u8; N]> {
            let mut buf = [0u8; N];
            input.read_exact(&mut buf).map_err(|e| {
                if e.kind() == std::io::ErrorKind::UnexpectedEof {
                    Error::format(format!("cache file truncated while reading {what}"))
                } else {
                    Error::Io(e)
                }
            })?;
            Ok(buf)
        }

        if take::<4>(&mut input, "magic")? != MAGIC {
            return Err(Error::format("not a log-prob cache file (bad magic)"));
        }
        let version = u32::from_le_bytes(take(&mut input, "version")?);
        if version != VERSION {
            return Err(Error::format(format!(
                "unsupported cache version {version} (expected {VERSION})"
            )));
        }
        let count = u64::from_le_bytes(take(&mut input, "record count")?);
        let mut cache = LogProbCache::new();
        for i in 0..count {
            let what = format!("record {i}");
            let pair_id = u64::from_le_bytes(take(&mut input, &what)?);
            let branch = Branch::from_byte(take::<1>(&mut input, &what)?[0])?;
            let logp = f64::from_le_bytes(take(&mut input, &what)?);
            if !logp.is_finite() {
                return Err(Error::format(format!(
                    "record {i} (pair {pair_id}) holds a non-finite log-probability"
                )));
            }
            cache.insert(pair_id, branch, logp).map_err(|_| {
                Error::format(format!("record {i} duplicates pair {pair_id} {branch:?}"))
            })?;
        }
        let mut trailing = [0u8; 1];
        match input.read(&mut trailing)? {
            0 => Ok(cache),
            _ => Err(Error::format("cache file has data past the declared records")),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file)?;
        file.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
