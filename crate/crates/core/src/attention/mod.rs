//! Hybrid attention mechanics: layer patterns mixing sliding-window and
//! full attention, rotary position embeddings, masked attention kernels,
//! KV-cache simulation with cross-layer sharing, cache-memory accounting,
//! and a toy attention-only transformer that decodes incrementally.

mod cache;
mod memory;
mod model;
mod ops;
mod rope;

pub use cache::{CacheCheckpoint, KvCache};
pub use memory::{memory_account, CacheLayout, MemoryParams};
pub use model::{decode_step, ModelConfig, ToyTransformer};
pub use ops::{attend_full, attend_sliding};
pub use rope::{rope_apply, RopeConfig};

use crate::{Error, Result};

/// Kind of one attention layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// Attends the most recent `window` positions (inclusive of the current
    /// one).
    SlidingWindow,
    /// Attends the entire causal prefix.
    Full,
}

/// Repeating layer pattern of a model, plus the sliding-window width and
/// whether consecutive full-attention layers share one KV buffer.
///
/// The pattern tiles across the model depth and is truncated at the last
/// layer when the depth is not a multiple of the pattern length. "Consecutive
/// full layers" means consecutive within the subsequence of full layers:
/// full layers pair up greedily in depth order (the first of each pair owns
/// the physical buffer, the second reads it), and a trailing unpaired full
/// layer keeps its own buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPattern {
    kinds: Vec<LayerKind>,
    window: usize,
    share_full_kv: bool,
}

/// Role of one layer in the cache plan produced by
/// [`LayerPattern::cache_plan`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheRole {
    /// Sliding layer with its own ring buffer.
    Sliding,
    /// Full layer that owns physical buffer `buffer`.
    FullOwner { buffer: usize },
    /// Full layer that reads buffer `buffer` owned by an earlier layer.
    FullShared { buffer: usize },
}

impl LayerPattern {
    /// Builds a pattern from an explicit kind tile.
    pub fn new(kinds: Vec<LayerKind>, window: usize, share_full_kv: bool) -> Result<Self> {
        if kinds.is_empty() {
            return Err(Error::invalid("layer pattern must contain at least one layer"));
        }
        if window == 0 {
            return Err(Error::invalid("sliding window must be at least 1"));
        }
        Ok(LayerPattern { kinds, window, share_full_kv })
    }

    /// Parses a pattern spelling: `"S:F"` counts like `"3:1"` (that many
    /// sliding then full layers per tile), or the words `"all-full"` /
    /// `"full"` and `"all-sliding"` / `"sliding"`.
    pub fn parse(spec: &str, window: usize, share_full_kv: bool) -> Result<Self> {
        let kinds = match spec {
            "all-full" | "full" => vec![LayerKind::Full],
            "all-sliding" | "sliding" => vec![LayerKind::SlidingWindow],
            other => {
                let (s, f) = other.split_once(':').ok_or_else(|| {
                    Error::invalid(format!(
                        "unrecognized pattern '{other}' (expected 'S:F', 'all-full', or 'all-sliding')"
                    ))
                })?;
                let s: usize = s
                    .trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad sliding count in pattern '{other}'")))?;
                let f: usize = f
                    .trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad full count in pattern '{other}'")))?;
                if s + f == 0 {
                    return Err(Error::invalid("pattern tile must contain at least one layer"));
                }
                let mut kinds = vec![LayerKind::SlidingWindow; s];
                kinds.extend(std::iter::repeat_n(LayerKind::Full, f));
                kinds
            }
        };
        LayerPattern::new(kinds, window, share_full_kv)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn share_full_kv(&self) -> bool {
        self.share_full_kv
    }

    pub fn tile(&self) -> &[LayerKind] {
        &self.kinds
    }

    /// Expands the tile across `n_layers` layers (truncating the last tile).
    pub fn expand(&self, n_layers: usize) -> Result<Vec<LayerKind>> {
        if n_layers == 0 {
            return Err(Error::invalid("a model needs at least one layer"));
        }
        Ok((0..n_layers).map(|i| self.kinds[i % self.kinds.len()]).collect())
    }

    /// Assigns each layer its cache role and reports the number of physical
    /// full-attention buffers.
    pub fn cache_plan(&self, n_layers: usize) -> Result<(Vec<CacheRole>, usize)> {
        let kinds = self.expand(n_layers)?;
        let mut roles = Vec::with_capacity(n_layers);
        let mut buffers = 0usize;
        let mut open_buffer: Option<usize> = None;
        for kind in kinds {
            match kind {
                LayerKind::SlidingWindow => roles.push(CacheRole::Sliding),
                LayerKind::Full => {
                    if self.share_full_kv {
                        if let Some(b) = open_buffer.take() {
                            roles.push(CacheRole::FullShared { buffer: b });
                        } else {
                            let b = buffers;
                            buffers += 1;
                            open_buffer = Some(b);
                            roles.push(CacheRole::FullOwner { buffer: b });
                        }
                    } else {
                        let b = buffers;
                        buffers += 1;
                        roles.push(CacheRole::FullOwner { buffer: b });
                    }
                }
            }
        }
        Ok((roles, buffers))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_counts_and_words() {
        let p = LayerPattern::parse("3:1", 16, true).unwrap();
        assert_eq!(
            p.tile(),
            &[
                LayerKind::SlidingWindow,
                LayerKind::SlidingWindow,
                LayerKind::SlidingWindow,
                LayerKind::Full
            ]
        );
        assert_eq!(LayerPattern::parse("all-full", 4, false).unwrap().tile(), &[LayerKind::Full]);
        assert_eq!(
            LayerPattern::parse("sliding", 4, false).unwrap().tile(),
            &[LayerKind::SlidingWindow]
        );
        assert!(LayerPattern::parse("junk", 4, false).is_err());
        assert!(LayerPattern::parse("0:0", 4, false).is_err());
        assert!(LayerPattern::parse("3:x", 4, false).is_err());
    }

    #[test]
    fn expand_tiles_and_truncates() {
        let p = LayerPattern::parse("3:1", 8, false).unwrap();
        let kinds = p.expand(6).unwrap();
        assert_eq!(
            kinds,
            vec![
                LayerKind::SlidingWindow,
                LayerKind::SlidingWindow,
                LayerKind::SlidingWindow,
                LayerKind::Full,
                LayerKind::SlidingWindow,
                LayerKind::SlidingWindow,
            ]
        );
        assert!(p.expand(0).is_err());
    }

    #[test]
    fn sharing_pairs_full_layers_across_tiles() {
        let p = LayerPattern::parse("3:1", 8, true).unwrap();
        let (roles, buffers) = p.cache_plan(8).unwrap();
        assert_eq!(buffers, 1);
        assert_eq!(roles[3], CacheRole::FullOwner { buffer: 0 });
        assert_eq!(roles[7], CacheRole::FullShared { buffer: 0 });
    }

    #[test]
    fn odd_full_layer_count_leaves_last_unshared() {
        let p = LayerPattern::parse("all-full", 8, true).unwrap();
        let (roles, buffers) = p.cache_plan(5).unwrap();
        assert_eq!(buffers, 3);
        assert_eq!(roles[4], CacheRole::FullOwner { buffer: 2 });
    }

    #[test]
    fn sharing_off_gives_every_full_layer_a_buffer() {
        let p = LayerPattern::parse("all-full", 8, false).unwrap();
        let (_, buffers) = p.cache_plan(6).unwrap();
        assert_eq!(buffers, 6);
    }

    #[test]
    fn constructor_validates() {
        assert!(LayerPattern::new(vec![], 4, false).is_err());
        assert!(LayerPattern::new(vec![LayerKind::Full], 0, false).is_err());
    }
}
