//! Simulated KV cache: per-layer ring buffers for sliding-window layers,
//! append-only buffers for full layers, cross-layer sharing of full-layer
//! buffers, position checkpoints for prefix reuse, and byte accounting that
//! can be cross-checked against the closed-form layout.

use std::collections::VecDeque;

use super::{CacheRole, LayerPattern};
use crate::{Error, Result};

#[derive(Debug, Clone, Default)]
struct FullBuffer {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct RingEntry {
    position: usize,
    key: Vec<f64>,
    value: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct Ring {
    entries: VecDeque<RingEntry>,
}

/// Snapshot of a cache taken at a token boundary; restoring rolls every
/// buffer back to the snapshot position.
#[derive(Debug, Clone)]
pub struct CacheCheckpoint {
    tokens_seen: usize,
    full_lens: Vec<usize>,
    rings: Vec<Ring>,
}

impl CacheCheckpoint {
    pub fn tokens_seen(&self) -> usize {
        self.tokens_seen
    }
}

/// KV cache for one model instance.
#[derive(Debug, Clone)]
pub struct KvCache {
    window: usize,
    dim: usize,
    roles: Vec<CacheRole>,
    full: Vec<FullBuffer>,
    rings: Vec<Ring>,
    ring_of_layer: Vec<Option<usize>>,
    tokens_seen: usize,
    reads_last_step: Vec<usize>,
}

impl KvCache {
    /// Builds an empty cache for `pattern` tiled over `n_layers` layers with
    /// `dim` model dimensions per cached row.
    pub fn new(pattern: &LayerPattern, n_layers: usize, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("cache row dimension must be at least 1"));
        }
        let (roles, n_buffers) = pattern.cache_plan(n_layers)?;
        let mut rings = Vec::new();
        let mut ring_of_layer = Vec::with_capacity(n_layers);
        for role in &roles {
            if matches!(role, CacheRole::Sliding) {
                ring_of_layer.push(Some(rings.len()));
                rings.push(Ring::default());
            } else {
                ring_of_layer.push(None);
            }
        }
        Ok(KvCache {
            window: pattern.window(),
            dim,
            roles,
            full: vec![FullBuffer::default(); n_buffers],
            rings,
            ring_of_layer,
            tokens_seen: 0,
            reads_last_step: vec![0; n_layers],
        })
    }

    pub fn n_layers(&self) -> usize {
        self.roles.len()
    }

    pub fn tokens_seen(&self) -> usize {
        self.tokens_seen
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn roles(&self) -> &[CacheRole] {
        &self.roles
    }

    /// Number of physical full-attention buffers (shared pairs count once).
    pub fn physical_full_buffers(&self) -> usize {
        self.full.len()
    }

    /// Cached rows read by `layer` during the most recent step.
    pub fn reads_last_step(&self, layer: usize) -> usize {
        self.reads_last_step[layer]
    }

    pub(crate) fn begin_step(&mut self) {
        for r in &mut self.reads_last_step {
            *r = 0;
        }
    }

    /// Appends one roped key row and one value row for the current position.
    /// Only sliding layers and buffer-owning full layers may push; a sharing
    /// layer reads its partner's buffer instead.
    pub(crate) fn push(&mut self, layer: usize, key: Vec<f64>, value: Vec<f64>) {
        debug_assert_eq!(key.len(), self.dim);
        debug_assert_eq!(value.len(), self.dim);
        match self.roles[layer] {
            CacheRole::Sliding => {
                let ring = &mut self.rings[self.ring_of_layer[layer].expect("sliding ring")];
                if ring.entries.len() == self.window {
                    ring.entries.pop_front();
                }
                ring.entries.push_back(RingEntry { position: self.tokens_seen, key, value });
            }
            CacheRole::FullOwner { buffer } => {
                self.full[buffer].keys.push(key);
                self.full[buffer].values.push(value);
            }
            CacheRole::FullShared { .. } => {
                debug_assert!(false, "shared layers do not project keys or values");
            }
        }
    }

    /// Returns the rows `layer` attends at the current position and records
    /// the read count.
    pub(crate) fn visible_rows(&mut self, layer: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let (keys, values) = match self.roles[layer] {
            CacheRole::Sliding => {
                let ring = &self.rings[self.ring_of_layer[layer].expect("sliding ring")];
                (
                    ring.entries.iter().map(|e| e.key.clone()).collect::<Vec<_>>(),
                    ring.entries.iter().map(|e| e.value.clone()).collect::<Vec<_>>(),
                )
            }
            CacheRole::FullOwner { buffer } | CacheRole::FullShared { buffer } => {
                (self.full[buffer].keys.clone(), self.full[buffer].values.clone())
            }
        };
        self.reads_last_step[layer] += keys.len();
        (keys, values)
    }

    /// Oldest cached absolute position visible to `layer` (for debugging and
    /// window assertions).
    pub fn oldest_position(&self, layer: usize) -> Option<usize> {
        match self.roles[layer] {
            CacheRole::Sliding => self.rings[self.ring_of_layer[layer]?]
                .entries
                .front()
                .map(|e| e.position),
            CacheRole::FullOwner { buffer } | CacheRole::FullShared { buffer } => {
                if self.full[buffer].keys.is_empty() {
                    None
                } else {
                    Some(0)
                }
            }
        }
    }

    pub(crate) fn advance(&mut self) {
        self.tokens_seen += 1;
    }

    /// Appends `n_tokens` placeholder rows through the normal push path,
    /// honoring ring eviction and buffer sharing, without running any model.
    /// Used to cross-check byte accounting at full context length.
    pub fn simulate_fill(&mut self, n_tokens: usize) {
        for _ in 0..n_tokens {
            for layer in 0..self.roles.len() {
                match self.roles[layer] {
                    CacheRole::Sliding | CacheRole::FullOwner { .. } => {
                        self.push(layer, vec![0.0; self.dim], vec![0.0; self.dim]);
                    }
                    CacheRole::FullShared { .. } => {}
                }
            }
            self.advance();
        }
    }

    /// Bytes the cache would occupy at `bytes_per_element` per stored
    /// element, counting each physical row (keys and values) exactly once.
    pub fn bytes_used(&self, bytes_per_element: usize) -> u64 {
        let mut rows = 0u64;
        for b in &self.full {
            rows += (b.keys.len() + b.values.len()) as u64;
        }
        for r in &self.rings {
            rows += 2 * r.entries.len() as u64;
        }
        rows * self.dim as u64 * bytes_per_element as u64
    }

    /// Snapshots the cache at the current token boundary.
    pub fn checkpoint(&self) -> CacheCheckpoint {
        CacheCheckpoint {
            tokens_seen: self.tokens_seen,
            full_lens: self.full.iter().map(|b| b.keys.len()).collect(),
            rings: self.rings.clone(),
        }
    }

    /// Rolls the cache back to a snapshot taken earlier on this cache.
    ///
    /// Full buffers are truncated to the snapshot lengths and sliding rings
    /// are restored from their saved contents. Errors when the snapshot
    /// describes a different cache shape or a position this cache has not
    /// reached (a checkpoint can only roll backward).
    pub fn restore(&mut self, checkpoint: &CacheCheckpoint) -> Result<()> {
        if checkpoint.full_lens.len() != self.full.len()
            || checkpoint.rings.len() != self.rings.len()
        {
            return Err(Error::state("checkpoint shape does not match this cache"));
        }
        if checkpoint.tokens_seen > self.tokens_seen {
            return Err(Error::state(format!(
                "cannot restore forward: checkpoint at {} tokens but cache has seen {}",
                checkpoint.tokens_seen, self.tokens_seen
            )));
        }
        for (b, &len) in self.full.iter_mut().zip(&checkpoint.full_lens) {
            if b.keys.len() < len {
                return Err(Error::state("checkpoint is ahead of a full buffer"));
            }
            b.keys.truncate(len);
            b.values.truncate(len);
        }
        self.rings.clone_from(&checkpoint.rings);
        self.tokens_seen = checkpoint.tokens_seen;
        Ok(())
    }
}
