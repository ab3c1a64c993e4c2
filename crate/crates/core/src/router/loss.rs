//! Balance losses over routing statistics and their analytic gradients.
//!
//! Each scope contributes `alpha * n * sum_i f_i * P_i`, where `n` is the
//! number of experts in the scope, `f_i` the fraction of the scope's tokens
//! whose argmax is expert `i`, and `P_i` the mean routing probability of
//! expert `i` over the scope's tokens. Group- and partition-scope losses sum
//! the per-scope terms. The token fractions `f` and the scope memberships
//! are treated as constants when differentiating: gradient flows only
//! through the mean probabilities, via the softmax Jacobian.

use super::{BalanceStats, ExpertTopology, GateOutput, LossCoefficients, ScopeKind};
use crate::numkit::Matrix;
use crate::{Error, Result};

fn check_alpha(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::invalid(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    Ok(())
}

fn scope_term(stats: &BalanceStats) -> f64 {
    let n = stats.token_fraction.len() as f64;
    let dot: f64 =
        stats.token_fraction.iter().zip(&stats.mean_prob).map(|(f, p)| f * p).sum();
    n * dot
}

/// Global balance loss: `alpha * N * sum_i f_i * P_i`.
///
/// `stats` must be global-scope. At uniform routing the value is exactly
/// `alpha`; full collapse onto one expert gives `alpha * N`.
pub fn loss_st(stats: &BalanceStats, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if stats.kind != ScopeKind::Global {
        return Err(Error::invalid("loss_st requires global-scope stats"));
    }
    Ok(alpha * scope_term(stats))
}

/// Group-scope balance loss: sums `alpha * n_g * sum_i f_i * P_i` over the
/// supplied group stats. Empty groups contribute zero.
pub fn loss_ep(stats: &[BalanceStats], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    for s in stats {
        if s.kind != ScopeKind::Group {
            return Err(Error::invalid("loss_ep requires group-scope stats"));
        }
    }
    Ok(alpha * stats.iter().map(scope_term).sum::<f64>())
}

/// Partition-scope balance loss: same shape as [`loss_ep`] over partitions.
pub fn loss_pep(stats: &[BalanceStats], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    for s in stats {
        if s.kind != ScopeKind::Partition {
            return Err(Error::invalid("loss_pep requires partition-scope stats"));
        }
    }
    Ok(alpha * stats.iter().map(scope_term).sum::<f64>())
}

/// Frozen routing decisions of one batch: every token's argmax expert, the
/// scope it therefore belongs to, and the token-fraction vectors of every
/// scope. These are the quantities held constant during differentiation.
#[derive(Debug, Clone)]
pub struct RoutingAssignments {
    pub argmax: Vec<usize>,
    pub global_fraction: Vec<f64>,
    pub group_fraction: Vec<Vec<f64>>,
    pub partition_fraction: Vec<Vec<f64>>,
    pub group_count: Vec<usize>,
    pub partition_count: Vec<usize>,
}

/// Extracts the frozen routing assignments of a batch.
pub fn routing_assignments(
    gate: &GateOutput,
    topology: &ExpertTopology,
) -> Result<RoutingAssignments> {
    if gate.n_experts() != topology.n_experts() {
        return Err(Error::invalid(format!(
            "gate has {} experts but topology has {}",
            gate.n_experts(),
            topology.n_experts()
        )));
    }
    let n = topology.n_experts();
    let batch = gate.batch_size();
    let argmax: Vec<usize> = (0..batch).map(|t| gate.argmax(t)).collect();

    let mut expert_count = vec![0usize; n];
    for &e in &argmax {
        expert_count[e] += 1;
    }
    let global_fraction: Vec<f64> =
        expert_count.iter().map(|&c| c as f64 / batch as f64).collect();

    let mut group_count = vec![0usize; topology.n_groups()];
    let mut partition_count = vec![0usize; topology.n_partitions()];
    for &e in &argmax {
        group_count[topology.group_of_expert(e)] += 1;
        partition_count[topology.partition_of_expert(e)] += 1;
    }
    let group_fraction = (0..topology.n_groups())
        .map(|g| {
            let range = topology.experts_in_group(g);
            range
                .map(|e| {
                    if group_count[g] == 0 {
                        0.0
                    } else {
                        expert_count[e] as f64 / group_count[g] as f64
                    }
                })
                .collect()
        })
        .collect();
    let partition_fraction = (0..topology.n_partitions())
        .map(|p| {
            let range = topology.experts_in_partition(p);
            range
                .map(|e| {
                    if partition_count[p] == 0 {
                        0.0
                    } else {
                        expert_count[e] as f64 / partition_count[p] as f64
                    }
                })
                .collect()
        })
        .collect();

    Ok(RoutingAssignments {
        argmax,
        global_fraction,
        group_fraction,
        partition_fraction,
        group_count,
        partition_count,
    })
}

/// Combined balance loss evaluated from routing probabilities with frozen
/// assignments.
///
/// This is the differentiable surrogate behind [`combined_aux_loss`]: the
/// token fractions and scope memberships come from `frozen`, while the mean
/// probabilities are recomputed from `probs`. Evaluating it at the batch
/// that produced `frozen` gives the true combined loss; evaluating it at
/// perturbed probabilities is what finite-difference checks differentiate.
pub fn surrogate_loss(
    probs: &Matrix,
    frozen: &RoutingAssignments,
    topology: &ExpertTopology,
    coeffs: &LossCoefficients,
) -> Result<f64> {
    let n = topology.n_experts();
    let batch = probs.rows();
    if probs.cols() != n {
        return Err(Error::invalid(format!(
            "probability matrix has {} experts but topology has {n}",
            probs.cols()
        )));
    }
    if frozen.argmax.len() != batch {
        return Err(Error::invalid(format!(
            "frozen assignments cover {} tokens but batch has {batch}",
            frozen.argmax.len()
        )));
    }

    // Global term.
    let mut mean_prob = vec![0.0; n];
    for t in 0..batch {
        for (acc, p) in mean_prob.iter_mut().zip(probs.row(t)) {
            *acc += p;
        }
    }
    let inv_batch = 1.0 / batch as f64;
    for p in &mut mean_prob {
        *p *= inv_batch;
    }
    let st: f64 = frozen
        .global_fraction
        .iter()
        .zip(&mean_prob)
        .map(|(f, p)| f * p)
        .sum::<f64>()
        * n as f64;

    // Group terms.
    let mut ep = 0.0;
    for g in 0..topology.n_groups() {
        let count = frozen.group_count[g];
        if count == 0 {
            continue;
        }
        let range = topology.experts_in_group(g);
        let width = range.end - range.start;
        let mut scope_mean = vec![0.0; width];
        for (t, &e) in frozen.argmax.iter().enumerate() {
            if topology.group_of_expert(e) != g {
                continue;
            }
            let row = probs.row(t);
            for (slot, ex) in range.clone().enumerate() {
                scope_mean[slot] += row[ex];
            }
        }
        let inv = 1.0 / count as f64;
        let dot: f64 = frozen.group_fraction[g]
            .iter()
            .zip(&scope_mean)
            .map(|(f, p)| f * p * inv)
            .sum();
        ep += width as f64 * dot;
    }

    // Partition terms.
    let mut pep = 0.0;
    for p in 0..topology.n_partitions() {
        let count = frozen.partition_count[p];
        if count == 0 {
            continue;
        }
        let range = topology.experts_in_partition(p);
        let width = range.end - range.start;
        let mut scope_mean = vec![0.0; width];
        for (t, &e) in frozen.argmax.iter().enumerate() {
            if topology.partition_of_expert(e) != p {
                continue;
            }
            let row = probs.row(t);
            for (slot, ex) in range.clone().enumerate() {
                scope_mean[slot] += row[ex];
            }
        }
        let inv = 1.0 / count as f64;
        let dot: f64 = frozen.partition_fraction[p]
            .iter()
            .zip(&scope_mean)
            .map(|(f, q)| f * q * inv)
            .sum();
        pep += width as f64 * dot;
    }

    Ok(coeffs.alpha_st * st + coeffs.alpha_ep * ep + coeffs.alpha_pep * pep)
}

/// Combined balance loss and its gradient.
#[derive(Debug, Clone)]
pub struct AuxLossOutput {
    pub loss: f64,
    /// Gradient with respect to the per-token gate logits, `[tokens x experts]`.
    pub logit_grad: Matrix,
}

/// Evaluates the combined balance loss and its analytic gradient with
/// respect to the per-token gate logits.
///
/// Token fractions and scope memberships are constants of the batch;
/// gradient flows only through the mean-probability factors and then
/// through the softmax Jacobian. All-zero coefficients give a zero loss and
/// a zero gradient.
pub fn combined_aux_loss(
    gate: &GateOutput,
    topology: &ExpertTopology,
    coeffs: &LossCoefficients,
) -> Result<AuxLossOutput> {
    let frozen = routing_assignments(gate, topology)?;
    let probs = gate.probs();
    let loss = surrogate_loss(probs, &frozen, topology, coeffs)?;

    let n = topology.n_experts();
    let batch = gate.batch_size();
    let inv_batch = 1.0 / batch as f64;
    let mut logit_grad = Matrix::zeros(batch, n);

    // dL/dp_i(t), assembled per token from the three scopes the token's
    // probabilities feed: the global mean, its argmax group's mean, and its
    // argmax partition's mean.
    let mut prob_grad = vec![0.0; n];
    for t in 0..batch {
        let assigned = frozen.argmax[t];
        let g = topology.group_of_expert(assigned);
        let p = topology.partition_of_expert(assigned);
        let group_range = topology.experts_in_group(g);
        let part_range = topology.experts_in_partition(p);
        let group_width = (group_range.end - group_range.start) as f64;
        let part_width = (part_range.end - part_range.start) as f64;
        let inv_group = 1.0 / frozen.group_count[g] as f64;
        let inv_part = 1.0 / frozen.partition_count[p] as f64;

        for (i, slot) in prob_grad.iter_mut().enumerate() {
            let mut acc =
                coeffs.alpha_st * n as f64 * frozen.global_fraction[i] * inv_batch;
            if group_range.contains(&i) {
                acc += coeffs.alpha_ep
                    * group_width
                    * frozen.group_fraction[g][i - group_range.start]
                    * inv_group;
            }
            if part_range.contains(&i) {
                acc += coeffs.alpha_pep
                    * part_width
                    * frozen.partition_fraction[p][i - part_range.start]
                    * inv_part;
            }
            *slot = acc;
        }

        // Softmax Jacobian: dL/dz_j = p_j (g_j - <p, g>).
        let row = probs.row(t);
        let inner: f64 = row.iter().zip(&prob_grad).map(|(p, g)| p * g).sum();
        let out = logit_grad.row_mut(t);
        for j in 0..n {
            out[j] = row[j] * (prob_grad[j] - inner);
        }
    }

    if !loss.is_finite() {
        return Err(Error::numeric("combined balance loss is non-finite"));
    }
    Ok(AuxLossOutput { loss, logit_grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{grad_check, softmax, Rng};
    use crate::router::{balance_stats, gate};

    fn uniform_stats(kind: ScopeKind, idx: usize, n: usize) -> BalanceStats {
        BalanceStats {
            kind,
            scope_index: idx,
            token_fraction: vec![1.0 / n as f64; n],
            mean_prob: vec![1.0 / n as f64; n],
            scope_token_count: n,
        }
    }

    fn collapsed_stats(kind: ScopeKind, idx: usize, n: usize) -> BalanceStats {
        let mut f = vec![0.0; n];
        let mut p = vec![0.0; n];
        f[0] = 1.0;
        p[0] = 1.0;
        BalanceStats {
            kind,
            scope_index: idx,
            token_fraction: f,
            mean_prob: p,
            scope_token_count: n,
        }
    }

    #[test]
    fn loss_st_is_alpha_at_uniform_for_every_n() {
        for n in 1..=64 {
            let v = loss_st(&uniform_stats(ScopeKind::Global, 0, n), 0.37).unwrap();
            assert!((v - 0.37).abs() < 1e-12, "n={n} v={v}");
        }
    }

    #[test]
    fn loss_st_collapse_costs_n_times_alpha() {
        let v = loss_st(&collapsed_stats(ScopeKind::Global, 0, 8), 2.0).unwrap();
        assert_eq!(v, 16.0);
    }

    #[test]
    fn loss_ep_uniform_groups_cost_alpha_each() {
        let stats: Vec<BalanceStats> =
            (0..3).map(|g| uniform_stats(ScopeKind::Group, g, 4)).collect();
        let v = loss_ep(&stats, 0.5).unwrap();
        assert!((v - 1.5).abs() < 1e-12);
    }

    #[test]
    fn loss_ep_with_one_collapsed_group() {
        // One group fully collapsed onto one expert, the other two uniform:
        // alpha * (n_g + n_groups - 1).
        let n_g = 4;
        let mut stats = vec![collapsed_stats(ScopeKind::Group, 0, n_g)];
        stats.push(uniform_stats(ScopeKind::Group, 1, n_g));
        stats.push(uniform_stats(ScopeKind::Group, 2, n_g));
        let v = loss_ep(&stats, 1.0).unwrap();
        assert!((v - (n_g as f64 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn loss_pep_single_expert_partitions_reduce_to_mean_prob() {
        // With one expert per partition, f is 1 on every non-empty partition,
        // so each term is alpha * P.
        let mut rng = Rng::new(33);
        let emb = crate::numkit::Matrix::random(40, 6, 1.0, &mut rng);
        let w = crate::numkit::Matrix::random(6, 4, 1.0, &mut rng);
        let g = gate(&emb, &w, 1).unwrap();
        let topo = ExpertTopology::new(2, 2, 1, 1).unwrap();
        let mut expected = 0.0;
        let mut stats = Vec::new();
        for p in 0..4 {
            let s = balance_stats(&g, &topo, ScopeKind::Partition, p).unwrap();
            if s.scope_token_count > 0 {
                assert_eq!(s.token_fraction, vec![1.0]);
                expected += s.mean_prob[0];
            }
            stats.push(s);
        }
        let v = loss_pep(&stats, 0.25).unwrap();
        assert!((v - 0.25 * expected).abs() < 1e-12);
    }

    #[test]
    fn losses_validate_scope_kinds_and_alpha() {
        let global = uniform_stats(ScopeKind::Global, 0, 4);
        let group = uniform_stats(ScopeKind::Group, 0, 4);
        assert!(loss_st(&group, 1.0).is_err());
        assert!(loss_ep(std::slice::from_ref(&global), 1.0).is_err());
        assert!(loss_pep(&[group], 1.0).is_err());
        assert!(loss_st(&global, -1.0).is_err());
        assert!(loss_st(&global, f64::NAN).is_err());
    }

    /// One-hot round-robin gate over single-expert partitions: every scope
    /// is populated evenly and each scope term evaluates to exactly its
    /// alpha (soft gates can score lower because P stays below 1).
    fn round_robin_gate(n_experts: usize, tokens: usize) -> GateOutput {
        let mut probs = crate::numkit::Matrix::zeros(tokens, n_experts);
        for t in 0..tokens {
            probs.set(t, t % n_experts, 1.0);
        }
        GateOutput::from_probs(probs, 1).unwrap()
    }

    /// Applies `perm` to the columns of `w`: output column `perm[e]` is
    /// input column `e`.
    fn permute_cols(w: &crate::numkit::Matrix, perm: &[usize]) -> crate::numkit::Matrix {
        let mut out = crate::numkit::Matrix::zeros(w.rows(), w.cols());
        for r in 0..w.rows() {
            for (e, &target) in perm.iter().enumerate() {
                out.set(r, target, w.get(r, e));
            }
        }
        out
    }

    fn all_three_losses(
        g: &GateOutput,
        topo: &ExpertTopology,
    ) -> (f64, f64, f64) {
        let st = loss_st(&balance_stats(g, topo, ScopeKind::Global, 0).unwrap(), 1.0).unwrap();
        let groups: Vec<BalanceStats> = (0..topo.n_groups())
            .map(|i| balance_stats(g, topo, ScopeKind::Group, i).unwrap())
            .collect();
        let parts: Vec<BalanceStats> = (0..topo.n_partitions())
            .map(|i| balance_stats(g, topo, ScopeKind::Partition, i).unwrap())
            .collect();
        (st, loss_ep(&groups, 1.0).unwrap(), loss_pep(&parts, 1.0).unwrap())
    }

    #[test]
    fn permuting_gate_weight_columns_permutes_f_and_p_and_fixes_the_global_loss() {
        let mut rng = Rng::new(21);
        let emb = crate::numkit::Matrix::random(40, 6, 1.0, &mut rng);
        let w = crate::numkit::Matrix::random(6, 8, 1.0, &mut rng);
        let topo = ExpertTopology::new(2, 2, 2, 1).unwrap();
        let perm = [3usize, 7, 1, 5, 0, 2, 6, 4]; // crosses groups freely
        let base = gate(&emb, &w, 1).unwrap();
        let permuted = gate(&emb, &permute_cols(&w, &perm), 1).unwrap();

        let s = balance_stats(&base, &topo, ScopeKind::Global, 0).unwrap();
        let sp = balance_stats(&permuted, &topo, ScopeKind::Global, 0).unwrap();
        for (e, &pe) in perm.iter().enumerate() {
            assert_eq!(s.token_fraction[e], sp.token_fraction[pe], "f must permute");
            assert!((s.mean_prob[e] - sp.mean_prob[pe]).abs() < 1e-14, "P must permute");
        }
        let a = loss_st(&s, 1.0).unwrap();
        let b = loss_st(&sp, 1.0).unwrap();
        assert!((a - b).abs() < 1e-12, "global loss moved: {a} vs {b}");
    }

    #[test]
    fn structure_respecting_permutations_fix_the_scoped_losses() {
        let mut rng = Rng::new(22);
        let emb = crate::numkit::Matrix::random(40, 6, 1.0, &mut rng);
        let w = crate::numkit::Matrix::random(6, 8, 1.0, &mut rng);
        let topo = ExpertTopology::new(2, 2, 2, 1).unwrap();
        // Swap the experts of partition 0, swap the two partitions of group
        // 1, then swap the groups: the topology maps onto itself.
        let perm = [5usize, 4, 6, 7, 2, 3, 0, 1];
        let base = gate(&emb, &w, 1).unwrap();
        let permuted = gate(&emb, &permute_cols(&w, &perm), 1).unwrap();
        let (st_a, ep_a, pep_a) = all_three_losses(&base, &topo);
        let (st_b, ep_b, pep_b) = all_three_losses(&permuted, &topo);
        assert!((st_a - st_b).abs() < 1e-12);
        assert!((ep_a - ep_b).abs() < 1e-12);
        assert!((pep_a - pep_b).abs() < 1e-12);
    }

    #[test]
    fn group_crossing_permutations_move_the_scoped_losses() {
        // Four one-hot tokens inside group 0 give loss_ep = 1.0 (alpha).
        // Relabeling expert 3 to expert 4 pushes a token into group 1:
        // group 0 then costs 4 * (3 * 1/9) = 4/3 and group 1, with a single
        // fully-loaded expert, costs 4 * (1 * 1) = 4. The scoped losses are
        // only invariant under relabelings that respect the topology.
        let topo = ExpertTopology::new(2, 2, 2, 1).unwrap();
        let base = round_robin_gate(8, 4); // tokens on experts 0,1,2,3
        let mut probs = crate::numkit::Matrix::zeros(4, 8);
        for (t, &e) in [0usize, 1, 2, 4].iter().enumerate() {
            probs.set(t, e, 1.0);
        }
        let crossed = GateOutput::from_probs(probs, 1).unwrap();

        let groups = |g: &GateOutput| -> Vec<BalanceStats> {
            (0..2).map(|i| balance_stats(g, &topo, ScopeKind::Group, i).unwrap()).collect()
        };
        let ep_base = loss_ep(&groups(&base), 1.0).unwrap();
        let ep_crossed = loss_ep(&groups(&crossed), 1.0).unwrap();
        assert!((ep_base - 1.0).abs() < 1e-12);
        assert!((ep_crossed - (4.0 / 3.0 + 4.0)).abs() < 1e-12);
    }

    #[test]
    fn round_robin_one_hot_gate_costs_alpha_per_populated_scope() {
        // 2 groups x 2 partitions x 1 expert, default coefficients:
        // 1e-6 + 2 * 1e-4 + 4 * 1e-3.
        let topo = ExpertTopology::new(2, 2, 1, 1).unwrap();
        let g = round_robin_gate(4, 8);
        let coeffs = LossCoefficients::default();
        let out = combined_aux_loss(&g, &topo, &coeffs).unwrap();
        let expect = 1e-6 + 2.0 * 1e-4 + 4.0 * 1e-3;
        assert!((out.loss - expect).abs() < 1e-15, "loss {}", out.loss);
    }

    #[test]
    fn combined_loss_matches_the_three_scope_losses() {
        let mut rng = Rng::new(4);
        let emb = crate::numkit::Matrix::random(48, 8, 1.0, &mut rng);
        let w = crate::numkit::Matrix::random(8, 8, 1.0, &mut rng);
        let g = gate(&emb, &w, 2).unwrap();
        let topo = ExpertTopology::new(2, 2, 2, 2).unwrap();
        let coeffs = LossCoefficients::default();
        let out = combined_aux_loss(&g, &topo, &coeffs).unwrap();

        let st = loss_st(
            &balance_stats(&g, &topo, ScopeKind::Global, 0).unwrap(),
            coeffs.alpha_st,
        )
        .unwrap();
        let groups: Vec<BalanceStats> = (0..topo.n_groups())
            .map(|i| balance_stats(&g, &topo, ScopeKind::Group, i).unwrap())
            .collect();
        let parts: Vec<BalanceStats> = (0..topo.n_partitions())
            .map(|i| balance_stats(&g, &topo, ScopeKind::Partition, i).unwrap())
            .collect();
        let ep = loss_ep(&groups, coeffs.alpha_ep).unwrap();
        let pep = loss_pep(&parts, coeffs.alpha_pep).unwrap();
        assert!((out.loss - (st + ep + pep)).abs() < 1e-15);
    }

    #[test]
    fn zero_coefficients_give_zero_loss_and_gradient() {
        let g = round_robin_gate(4, 8);
        let topo = ExpertTopology::new(2, 2, 1, 1).unwrap();
        let out = combined_aux_loss(&g, &topo, &LossCoefficients::ZERO).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.logit_grad.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = Rng::new(12);
        let topo = ExpertTopology::new(2, 2, 2, 2).unwrap();
        let tokens = 12;
        let n = topo.n_experts();
        let logits: Vec<f64> = (0..tokens * n).map(|_| rng.uniform(-2.0, 2.0)).collect();

        let to_gate = |z: &[f64]| {
            let mut probs = crate::numkit::Matrix::zeros(tokens, n);
            for t in 0..tokens {
                let p = softmax(&z[t * n..(t + 1) * n]).unwrap();
                probs.row_mut(t).copy_from_slice(&p);
            }
            GateOutput::from_probs(probs, 1).unwrap()
        };

        let base = to_gate(&logits);
        let coeffs = LossCoefficients::default();
        let frozen = routing_assignments(&base, &topo).unwrap();
        let out = combined_aux_loss(&base, &topo, &coeffs).unwrap();

        let objective = |z: &[f64]| {
            let mut probs = crate::numkit::Matrix::zeros(tokens, n);
            for t in 0..tokens {
                let p = softmax(&z[t * n..(t + 1) * n]).unwrap();
                probs.row_mut(t).copy_from_slice(&p);
            }
            surrogate_loss(&probs, &frozen, &topo, &coeffs).unwrap()
        };
        let rel =
            grad_check(objective, out.logit_grad.as_slice(), &logits, 1e-5).unwrap();
        assert!(rel < 1e-6, "rel {rel}");
    }
}
