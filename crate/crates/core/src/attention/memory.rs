//! Closed-form KV-cache memory accounting for hybrid layer patterns.

use super::{CacheRole, LayerPattern};
use crate::{Error, Result};

/// Cache-geometry parameters for the accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryParams {
    pub context_len: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    /// Bookkeeping element width (e.g. 2 for fp16 service caches); the
    /// simulation itself stores f64 but accounts at this width.
    pub bytes_per_element: usize,
}

impl MemoryParams {
    fn validate(&self) -> Result<()> {
        if self.context_len == 0
            || self.n_heads == 0
            || self.head_dim == 0
            || self.bytes_per_element == 0
        {
            return Err(Error::invalid("memory parameters must all be at least 1"));
        }
        Ok(())
    }

    /// Bytes a single cached token occupies in one layer (keys + values).
    pub fn bytes_per_token_layer(&self) -> u64 {
        2 * (self.n_heads * self.head_dim * self.bytes_per_element) as u64
    }
}

/// Full accounting of a cache configuration against the all-full unshared
/// baseline at the same depth.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheLayout {
    pub context_len: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub bytes_per_element: usize,
    /// Cached tokens charged to each layer. A sliding layer holds
    /// `min(window, context_len)`; a full layer that owns its buffer holds
    /// `context_len`; a full layer reading a shared buffer is charged 0.
    pub per_layer_cached_tokens: Vec<u64>,
    pub total_bytes: u64,
    /// `n_layers * context_len` tokens at the same geometry.
    pub baseline_bytes: u64,
    /// `1 - total_bytes / baseline_bytes`.
    pub reduction: f64,
}

/// Accounts the KV-cache memory of `pattern` tiled over `n_layers` layers.
///
/// Errors when `n_layers` is zero or any geometry parameter is zero.
pub fn memory_account(
    pattern: &LayerPattern,
    n_layers: usize,
    params: &MemoryParams,
) -> Result<CacheLayout> {
    params.validate()?;
    let (roles, _) = pattern.cache_plan(n_layers)?;
    let per_layer: Vec<u64> = roles
        .iter()
        .map(|role| match role {
            CacheRole::Sliding => pattern.window().min(params.context_len) as u64,
            CacheRole::FullOwner { .. } => params.context_len as u64,
            CacheRole::FullShared { .. } => 0,
        })
        .collect();
    let bytes_per_token = params.bytes_per_token_layer();
    let total_bytes = per_layer.iter().sum::<u64>() * bytes_per_token;
    let baseline_bytes = n_layers as u64 * params.context_len as u64 * bytes_per_token;
    let reduction = 1.0 - total_bytes as f64 / baseline_bytes as f64;
    Ok(CacheLayout {
        context_len: params.context_len,
        n_heads: params.n_heads,
        head_dim: params.head_dim,
        bytes_per_element: params.bytes_per_element,
        per_layer_cached_tokens: per_layer,
        total_bytes,
        baseline_bytes,
        reduction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(context_len: usize) -> MemoryParams {
        MemoryParams { context_len, n_heads: 4, head_dim: 8, bytes_per_element: 2 }
    }

    #[test]
    fn hybrid_shared_pattern_hits_the_closed_form() {
        // Three sliding per full layer, window 4096, context 65536, pairs of
        // full layers sharing one buffer: per 8 layers the cache holds
        // 6W + L tokens against a baseline of 8L, i.e. 90112/524288, so the
        // reduction is exactly 82.8125%.
        let p = LayerPattern::parse("3:1", 4096, true).unwrap();
        let layout = memory_account(&p, 8, &params(65_536)).unwrap();
        assert_eq!(layout.per_layer_cached_tokens.iter().sum::<u64>(), 6 * 4096 + 65_536);
        assert_eq!(layout.reduction, 0.828125);
    }

    #[test]
    fn all_full_shared_halves_the_cache() {
        let p = LayerPattern::parse("all-full", 4096, true).unwrap();
        let layout = memory_account(&p, 8, &params(65_536)).unwrap();
        assert_eq!(layout.reduction, 0.5);
        assert_eq!(layout.total_bytes * 2, layout.baseline_bytes);
    }

    #[test]
    fn window_equal_to_context_removes_the_sliding_saving() {
        let p = LayerPattern::parse("all-sliding", 1024, false).unwrap();
        let layout = memory_account(&p, 4, &params(1024)).unwrap();
        assert_eq!(layout.reduction, 0.0);
        assert_eq!(layout.total_bytes, layout.baseline_bytes);
    }

    #[test]
    fn short_contexts_clamp_the_window() {
        let p = LayerPattern::parse("all-sliding", 4096, false).unwrap();
        let layout = memory_account(&p, 2, &params(100)).unwrap();
        assert_eq!(layout.per_layer_cached_tokens, vec![100, 100]);
        assert_eq!(layout.reduction, 0.0);
    }

    #[test]
    fn reduction_is_monotone_in_window_width() {
        let mut last = f64::INFINITY;
        for w in [256usize, 1024, 4096, 16_384, 65_536] {
            let p = LayerPattern::parse("3:1", w, true).unwrap();
            let layout = memory_account(&p, 8, &params(65_536)).unwrap();
            assert!(layout.reduction <= last);
            last = layout.reduction;
        }
    }

    #[test]
    fn zero_layers_and_zero_geometry_are_rejected() {
        let p = LayerPattern::parse("3:1", 4096, true).unwrap();
        assert!(memory_account(&p, 0, &params(1024)).is_err());
        let mut bad = params(1024);
        bad.context_len = 0;
        assert!(memory_account(&p, 8, &bad).is_err());
        let mut bad = params(1024);
        bad.bytes_per_element = 0;
        assert!(memory_account(&p, 8, &bad).is_err());
    }

    #[test]
    fn unshared_full_layers_are_charged_individually() {
        let p = LayerPattern::parse("3:1", 16, false).unwrap();
        let layout = memory_account(&p, 8, &params(256)).unwrap();
        assert_eq!(layout.per_layer_cached_tokens, vec![16, 16, 16, 256, 16, 16, 16, 256]);
    }
}
