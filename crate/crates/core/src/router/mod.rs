//! Sparse-gate routing: expert topology, linear-softmax gating, balance
//! statistics at three scopes (global, group, partition), the corresponding
//! balance losses with analytic gradients, fine-grained expert segmentation,
//! and a small gradient-descent loop that trains a gate against the combined
//! balance objective.
//!
//! Conventions used throughout:
//! - the gate is a linear map followed by softmax over all experts;
//! - a token's *assignment* for statistics is its argmax expert (ties break
//!   toward the lowest index), independent of `top_k`;
//! - a token belongs to a group/partition scope when its argmax expert lies
//!   in that scope;
//! - top-k selection keeps raw softmax probabilities (no renormalization).

mod loss;
mod segment;
mod train;

pub use loss::{
    combined_aux_loss, loss_ep, loss_pep, loss_st, routing_assignments, surrogate_loss,
    AuxLossOutput, RoutingAssignments,
};
pub use segment::{segment, SegmentedConfig};
pub use train::{train_gate, GateTrainOutcome, TokenSource, TrainRecord};

use crate::numkit::{softmax, topk, Matrix};
use crate::{Error, Result};

/// Hierarchical expert layout: experts are evenly divided into groups, and
/// each group is evenly divided into partitions.
///
/// Expert indices are contiguous: group `g` owns experts
/// `[g * experts_per_group, (g+1) * experts_per_group)`, and partitions tile
/// each group's range in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpertTopology {
    n_groups: usize,
    partitions_per_group: usize,
    experts_per_partition: usize,
    top_k: usize,
}

impl ExpertTopology {
    /// Builds a topology from its per-level sizes.
    ///
    /// All sizes must be at least 1 and `top_k` must not exceed the total
    /// expert count.
    pub fn new(
        n_groups: usize,
        partitions_per_group: usize,
        experts_per_partition: usize,
        top_k: usize,
    ) -> Result<Self> {
        if n_groups == 0 || partitions_per_group == 0 || experts_per_partition == 0 {
            return Err(Error::invalid("topology sizes must all be at least 1"));
        }
        let n_experts = n_groups * partitions_per_group * experts_per_partition;
        if top_k == 0 || top_k > n_experts {
            return Err(Error::invalid(format!(
                "top_k {top_k} out of range for {n_experts} experts"
            )));
        }
        Ok(ExpertTopology { n_groups, partitions_per_group, experts_per_partition, top_k })
    }

    pub fn n_experts(&self) -> usize {
        self.n_groups * self.partitions_per_group * self.experts_per_partition
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn experts_per_group(&self) -> usize {
        self.partitions_per_group * self.experts_per_partition
    }

    pub fn partitions_per_group(&self) -> usize {
        self.partitions_per_group
    }

    pub fn experts_per_partition(&self) -> usize {
        self.experts_per_partition
    }

    pub fn n_partitions(&self) -> usize {
        self.n_groups * self.partitions_per_group
    }

    pub fn top_k(&self) -> usize {
        self.top_k
    }

    pub fn group_of_expert(&self, expert: usize) -> usize {
        debug_assert!(expert < self.n_experts());
        expert / self.experts_per_group()
    }

    /// Global partition index of an expert.
    pub fn partition_of_expert(&self, expert: usize) -> usize {
        debug_assert!(expert < self.n_experts());
        expert / self.experts_per_partition
    }

    pub fn experts_in_group(&self, group: usize) -> std::ops::Range<usize> {
        debug_assert!(group < self.n_groups);
        let width = self.experts_per_group();
        group * width..(group + 1) * width
    }

    pub fn experts_in_partition(&self, partition: usize) -> std::ops::Range<usize> {
        debug_assert!(partition < self.n_partitions());
        let width = self.experts_per_partition;
        partition * width..(partition + 1) * width
    }
}

/// Scope a balance statistic is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScopeKind {
    Global,
    Group,
    Partition,
}

/// Routing coefficients for the combined balance objective.
///
/// The defaults follow the deployed configuration: the partition-scope term
/// carries the largest weight (1e-3), the group-scope term 1e-4, and the
/// global term only 1e-6.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefficients {
    pub alpha_st: f64,
    pub alpha_ep: f64,
    pub alpha_pep: f64,
}

impl LossCoefficients {
    pub const ZERO: LossCoefficients =
        LossCoefficients { alpha_st: 0.0, alpha_ep: 0.0, alpha_pep: 0.0 };

    pub fn new(alpha_st: f64, alpha_ep: f64, alpha_pep: f64) -> Result<Self> {
        for (name, a) in [("alpha_st", alpha_st), ("alpha_ep", alpha_ep), ("alpha_pep", alpha_pep)]
        {
            if !a.is_finite() || a < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {a}")));
            }
        }
        Ok(LossCoefficients { alpha_st, alpha_ep, alpha_pep })
    }
}

impl Default for LossCoefficients {
    fn default() -> Self {
        LossCoefficients { alpha_st: 1e-6, alpha_ep: 1e-4, alpha_pep: 1e-3 }
    }
}

/// Output of the gate for one batch of tokens.
#[derive(Debug, Clone)]
pub struct GateOutput {
    probs: Matrix,
    selected: Vec<Vec<usize>>,
    top_k: usize,
}

impl GateOutput {
    /// Wraps an explicit routing-probability matrix (rows are tokens).
    ///
    /// Rows must be finite, nonnegative, and sum to 1 within 1e-9. Selection
    /// is recomputed as the top-k of each row with lowest-index tie-breaking.
    pub fn from_probs(probs: Matrix, top_k: usize) -> Result<Self> {
        if probs.rows() == 0 || probs.cols() == 0 {
            return Err(Error::invalid("gate output needs at least one token and one expert"));
        }
        if top_k == 0 || top_k > probs.cols() {
            return Err(Error::invalid(format!(
                "top_k {} out of range for {} experts",
                top_k,
                probs.cols()
            )));
        }
        for t in 0..probs.rows() {
            let row = probs.row(t);
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::invalid(format!("token {t} has an invalid probability")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "token {t} probabilities sum to {sum}, expected 1"
                )));
            }
        }
        let selected = (0..probs.rows())
            .map(|t| topk(probs.row(t), top_k).map(|t| t.indices))
            .collect::<Result<Vec<_>>>()?;
        Ok(GateOutput { probs, selected, top_k })
    }

    /// Routing probabilities, one row per token, one column per expert.
    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    /// Per-token selected expert indices, sorted by descending probability.
    pub fn selected(&self) -> &[Vec<usize>] {
        &self.selected
    }

    pub fn top_k(&self) -> usize {
        self.top_k
    }

    pub fn batch_size(&self) -> usize {
        self.probs.rows()
    }

    pub fn n_experts(&self) -> usize {
        self.probs.cols()
    }

    /// The token's argmax expert (first selected entry).
    pub fn argmax(&self, token: usize) -> usize {
        self.selected[token][0]
    }
}

/// Runs the linear-softmax gate over a batch of token embeddings.
///
/// `token_embeddings` is `[tokens x dim]`, `gate_weights` is
/// `[dim x n_experts]`. Errors on shape mismatch and out-of-range `top_k`.
pub fn gate(token_embeddings: &Matrix, gate_weights: &Matrix, top_k: usize) -> Result<GateOutput> {
    if token_embeddings.cols() != gate_weights.rows() {
        return Err(Error::invalid(format!(
            "embedding dim {} does not match gate weight rows {}",
            token_embeddings.cols(),
            gate_weights.rows()
        )));
    }
    if token_embeddings.rows() == 0 {
        return Err(Error::invalid("gate needs at least one token"));
    }
    let n_experts = gate_weights.cols();
    if top_k == 0 || top_k > n_experts {
        return Err(Error::invalid(format!("top_k {top_k} out of range for {n_experts} experts")));
    }
    let logits = token_embeddings.matmul(gate_weights)?;
    let mut probs = Matrix::zeros(logits.rows(), logits.cols());
    let mut selected = Vec::with_capacity(logits.rows());
    for t in 0..logits.rows() {
        let p = softmax(logits.row(t))?;
        let sel = topk(&p, top_k)?.indices;
        probs.row_mut(t).copy_from_slice(&p);
        selected.push(sel);
    }
    Ok(GateOutput { probs, selected, top_k })
}

/// Balance statistics for one scope.
///
/// `token_fraction[i]` is the fraction of the scope's tokens whose argmax
/// expert is the scope's `i`-th expert; `mean_prob[i]` is the mean routing
/// probability assigned to that expert over the scope's tokens. For group
/// and partition scopes the scope's tokens are those whose argmax expert
/// lies inside the scope; an empty scope yields all-zero vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceStats {
    pub kind: ScopeKind,
    pub scope_index: usize,
    pub token_fraction: Vec<f64>,
    pub mean_prob: Vec<f64>,
    pub scope_token_count: usize,
}

/// Computes [`BalanceStats`] for one scope of the topology.
///
/// `scope_index` must be 0 for the global scope, a group index for
/// [`ScopeKind::Group`], and a global partition index for
/// [`ScopeKind::Partition`].
pub fn balance_stats(
    gate: &GateOutput,
    topology: &ExpertTopology,
    kind: ScopeKind,
    scope_index: usize,
) -> Result<BalanceStats> {
    if gate.n_experts() != topology.n_experts() {
        return Err(Error::invalid(format!(
            "gate has {} experts but topology has {}",
            gate.n_experts(),
            topology.n_experts()
        )));
    }
    let experts: std::ops::Range<usize> = match kind {
        ScopeKind::Global => {
            if scope_index != 0 {
                return Err(Error::invalid("global scope has index 0"));
            }
            0..topology.n_experts()
        }
        ScopeKind::Group => {
            if scope_index >= topology.n_groups() {
                return Err(Error::invalid(format!("group index {scope_index} out of range")));
            }
            topology.experts_in_group(scope_index)
        }
        ScopeKind::Partition => {
            if scope_index >= topology.n_partitions() {
                return Err(Error::invalid(format!("partition index {scope_index} out of range")));
            }
            topology.experts_in_partition(scope_index)
        }
    };

    let width = experts.end - experts.start;
    let mut token_fraction = vec![0.0; width];
    let mut mean_prob = vec![0.0; width];
    let mut count = 0usize;
    for t in 0..gate.batch_size() {
        let assigned = gate.argmax(t);
        if !experts.contains(&assigned) {
            continue;
        }
        count += 1;
        token_fraction[assigned - experts.start] += 1.0;
        let row = gate.probs().row(t);
        for (slot, e) in experts.clone().enumerate() {
            mean_prob[slot] += row[e];
        }
    }
    if count > 0 {
        let inv = 1.0 / count as f64;
        for x in &mut token_fraction {
            *x *= inv;
        }
        for x in &mut mean_prob {
            *x *= inv;
        }
    }
    Ok(BalanceStats { kind, scope_index, token_fraction, mean_prob, scope_token_count: count })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Rng;

    #[test]
    fn topology_validates_and_indexes() {
        let t = ExpertTopology::new(2, 2, 2, 2).unwrap();
        assert_eq!(t.n_experts(), 8);
        assert_eq!(t.experts_per_group(), 4);
        assert_eq!(t.n_partitions(), 4);
        assert_eq!(t.group_of_expert(5), 1);
        assert_eq!(t.partition_of_expert(5), 2);
        assert_eq!(t.experts_in_group(1), 4..8);
        assert_eq!(t.experts_in_partition(1), 2..4);
        assert!(ExpertTopology::new(0, 1, 1, 1).is_err());
        assert!(ExpertTopology::new(2, 2, 2, 9).is_err());
        assert!(ExpertTopology::new(2, 2, 2, 0).is_err());
    }

    #[test]
    fn zero_weights_route_every_token_to_expert_zero() {
        let emb = Matrix::from_vec(3, 2, vec![0.5, -1.0, 2.0, 0.3, -0.7, 0.9]).unwrap();
        let w = Matrix::zeros(2, 4);
        let g = gate(&emb, &w, 1).unwrap();
        for t in 0..3 {
            assert_eq!(g.probs().row(t), &[0.25, 0.25, 0.25, 0.25]);
            assert_eq!(g.selected()[t], vec![0]);
        }
    }

    #[test]
    fn gate_probability_rows_sum_to_one() {
        let mut rng = Rng::new(9);
        let emb = Matrix::random(16, 6, 1.0, &mut rng);
        let w = Matrix::random(6, 5, 1.0, &mut rng);
        let g = gate(&emb, &w, 2).unwrap();
        for t in 0..16 {
            let sum: f64 = g.probs().row(t).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert_eq!(g.selected()[t].len(), 2);
        }
    }

    #[test]
    fn gate_rejects_shape_and_k_errors() {
        let emb = Matrix::zeros(2, 3);
        let w = Matrix::zeros(4, 5);
        assert!(gate(&emb, &w, 1).is_err());
        let w = Matrix::zeros(3, 5);
        assert!(gate(&emb, &w, 6).is_err());
        assert!(gate(&emb, &w, 0).is_err());
    }

    #[test]
    fn selection_is_top_k_of_probabilities_with_tie_break() {
        // Two experts tie; the lower index must come first.
        let probs =
            Matrix::from_vec(1, 4, vec![0.25, 0.35, 0.35, 0.05]).unwrap();
        let g = GateOutput::from_probs(probs, 3).unwrap();
        assert_eq!(g.selected()[0], vec![1, 2, 0]);
    }

    #[test]
    fn from_probs_validates_rows() {
        let bad = Matrix::from_vec(1, 2, vec![0.7, 0.5]).unwrap();
        assert!(GateOutput::from_probs(bad, 1).is_err());
        let neg = Matrix::from_vec(1, 2, vec![-0.1, 1.1]).unwrap();
        assert!(GateOutput::from_probs(neg, 1).is_err());
    }

    #[test]
    fn global_stats_count_argmax_assignments() {
        // Four tokens, four experts, one-hot on experts 0,1,2,0.
        let mut probs = Matrix::zeros(4, 4);
        for (t, e) in [0usize, 1, 2, 0].iter().enumerate() {
            probs.set(t, *e, 1.0);
        }
        let g = GateOutput::from_probs(probs, 1).unwrap();
        let topo = ExpertTopology::new(2, 2, 1, 1).unwrap();
        let s = balance_stats(&g, &topo, ScopeKind::Global, 0).unwrap();
        assert_eq!(s.token_fraction, vec![0.5, 0.25, 0.25, 0.0]);
        assert_eq!(s.mean_prob, vec![0.5, 0.25, 0.25, 0.0]);
        assert_eq!(s.scope_token_count, 4);
    }

    #[test]
    fn group_stats_restrict_to_the_scope_batch() {
        // Experts {0,1} in group 0, {2,3} in group 1. Three tokens route to
        // group 0 (two to expert 0, one to expert 1), one token to expert 2.
        let rows = vec![
            0.6, 0.3, 0.05, 0.05, // argmax 0
            0.2, 0.7, 0.05, 0.05, // argmax 1
            0.7, 0.2, 0.05, 0.05, // argmax 0
            0.1, 0.1, 0.7, 0.1, // argmax 2
        ];
        let g = GateOutput::from_probs(Matrix::from_vec(4, 4, rows).unwrap(), 1).unwrap();
        let topo = ExpertTopology::new(2, 1, 2, 1).unwrap();
        let s = balance_stats(&g, &topo, ScopeKind::Group, 0).unwrap();
        assert_eq!(s.scope_token_count, 3);
        let expect_f = [2.0 / 3.0, 1.0 / 3.0];
        let expect_p = [(0.6 + 0.2 + 0.7) / 3.0, (0.3 + 0.7 + 0.2) / 3.0];
        for i in 0..2 {
            assert!((s.token_fraction[i] - expect_f[i]).abs() < 1e-12);
            assert!((s.mean_prob[i] - expect_p[i]).abs() < 1e-12);
        }
        // Token fractions always sum to 1 on a non-empty scope.
        assert!((s.token_fraction.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_scope_yields_zero_stats() {
        let mut probs = Matrix::zeros(2, 4);
        probs.set(0, 0, 1.0);
        probs.set(1, 1, 1.0);
        let g = GateOutput::from_probs(probs, 1).unwrap();
        let topo = ExpertTopology::new(2, 2, 1, 1).unwrap();
        let s = balance_stats(&g, &topo, ScopeKind::Group, 1).unwrap();
        assert_eq!(s.scope_token_count, 0);
        assert_eq!(s.token_fraction, vec![0.0, 0.0]);
        assert_eq!(s.mean_prob, vec![0.0, 0.0]);
    }

    #[test]
    fn balance_stats_validates_scope_index() {
        let g = GateOutput::from_probs(Matrix::from_vec(1, 4, vec![0.25; 4]).unwrap(), 1).unwrap();
        let topo = ExpertTopology::new(2, 2, 1, 1).unwrap();
        assert!(balance_stats(&g, &topo, ScopeKind::Global, 1).is_err());
        assert!(balance_stats(&g, &topo, ScopeKind::Group, 2).is_err());
        assert!(balance_stats(&g, &topo, ScopeKind::Partition, 4).is_err());
    }

    #[test]
    fn global_fractions_and_probs_sum_to_one_with_top1() {
        let mut rng = Rng::new(21);
        let emb = Matrix::random(64, 8, 1.0, &mut rng);
        let w = Matrix::random(8, 6, 1.0, &mut rng);
        let g = gate(&emb, &w, 1).unwrap();
        let topo = ExpertTopology::new(3, 2, 1, 1).unwrap();
        let s = balance_stats(&g, &topo, ScopeKind::Global, 0).unwrap();
        assert!((s.token_fraction.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((s.mean_prob.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(s.token_fraction.iter().all(|f| (0.0..=1.0).contains(f)));
    }
}
