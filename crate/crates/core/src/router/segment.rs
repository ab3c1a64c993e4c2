//! Fine-grained expert segmentation: split each expert's FFN into `m`
//! narrower experts and widen the selection by the same factor, preserving
//! both the total and the activated parameter count.

use crate::{Error, Result};

/// A base expert configuration together with its segmented form.
///
/// Segmentation by factor `m` maps `(experts, hidden, top_k)` to
/// `(m * experts, hidden / m, m * top_k)`. Each expert FFN holds
/// `2 * model_dim * hidden` parameters (an up- and a down-projection), so
/// both `experts * hidden` (total) and `top_k * hidden` (activated) are
/// invariant under segmentation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentedConfig {
    pub base_experts: usize,
    pub base_hidden: usize,
    pub base_top_k: usize,
    pub segment_factor: usize,
    pub seg_experts: usize,
    pub seg_hidden: usize,
    pub seg_top_k: usize,
}

impl SegmentedConfig {
    /// Total FFN parameter count of the segmented configuration.
    pub fn total_ffn_params(&self, model_dim: usize) -> u64 {
        2 * model_dim as u64 * self.seg_hidden as u64 * self.seg_experts as u64
    }

    /// FFN parameters activated per token in the segmented configuration.
    pub fn activated_ffn_params(&self, model_dim: usize) -> u64 {
        2 * model_dim as u64 * self.seg_hidden as u64 * self.seg_top_k as u64
    }

    /// Total FFN parameter count of the base configuration.
    pub fn base_total_ffn_params(&self, model_dim: usize) -> u64 {
        2 * model_dim as u64 * self.base_hidden as u64 * self.base_experts as u64
    }

    /// FFN parameters activated per token in the base configuration.
    pub fn base_activated_ffn_params(&self, model_dim: usize) -> u64 {
        2 * model_dim as u64 * self.base_hidden as u64 * self.base_top_k as u64
    }
}

/// Segments a base `(experts, hidden, top_k)` configuration by factor `m`.
///
/// Errors when any size is zero, when `top_k` exceeds the expert count, or
/// when `hidden` is not divisible by `m` (a split would not preserve the
/// parameter count).
pub fn segment(
    base_experts: usize,
    base_hidden: usize,
    base_top_k: usize,
    m: usize,
) -> Result<SegmentedConfig> {
    if base_experts == 0 || base_hidden == 0 || base_top_k == 0 || m == 0 {
        return Err(Error::invalid("segmentation sizes must all be at least 1"));
    }
    if base_top_k > base_experts {
        return Err(Error::invalid(format!(
            "top_k {base_top_k} exceeds expert count {base_experts}"
        )));
    }
    if !base_hidden.is_multiple_of(m) {
        return Err(Error::invalid(format!(
            "hidden size {base_hidden} is not divisible by segment factor {m}"
        )));
    }
    Ok(SegmentedConfig {
        base_experts,
        base_hidden,
        base_top_k,
        segment_factor: m,
        seg_experts: base_experts * m,
        seg_hidden: base_hidden / m,
        seg_top_k: base_top_k * m,
    })
}
