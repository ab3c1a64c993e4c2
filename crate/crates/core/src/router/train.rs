//! Plain gradient descent on gate weights against the combined balance
//! objective, with a seeded token stream so runs are reproducible.

use super::{combined_aux_loss, gate, routing_assignments, ExpertTopology, LossCoefficients};
use crate::numkit::{Matrix, Rng};
use crate::{Error, Result};

/// Seeded stream of token-embedding batches.
///
/// Every batch is `[tokens_per_step x embed_dim]` with independent standard
/// normal entries; the underlying generator is owned, so a source seeded the
/// same way always yields the same sequence of batches.
#[derive(Debug, Clone)]
pub struct TokenSource {
    rng: Rng,
    embed_dim: usize,
    tokens_per_step: usize,
}

impl TokenSource {
    pub fn new(seed: u64, embed_dim: usize, tokens_per_step: usize) -> Result<Self> {
        if embed_dim == 0 || tokens_per_step == 0 {
            return Err(Error::invalid("token source sizes must be at least 1"));
        }
        Ok(TokenSource { rng: Rng::new(seed), embed_dim, tokens_per_step })
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn tokens_per_step(&self) -> usize {
        self.tokens_per_step
    }

    /// Draws the next batch of token embeddings.
    pub fn next_batch(&mut self) -> Matrix {
        Matrix::random(self.tokens_per_step, self.embed_dim, 1.0, &mut self.rng)
    }
}

/// One recorded step of gate training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    pub loss: f64,
    /// Largest global token fraction this step.
    pub max_f: f64,
    /// Smallest global token fraction this step.
    pub min_f: f64,
}

/// Outcome of [`train_gate`]: the per-step trajectory and the final weights.
#[derive(Debug, Clone)]
pub struct GateTrainOutcome {
    pub trajectory: Vec<TrainRecord>,
    pub weights: Matrix,
}

/// Trains gate weights by plain gradient descent on the combined balance
/// loss.
///
/// Each step draws a fresh batch from `source`, evaluates
/// [`combined_aux_loss`], records the loss together with the largest and
/// smallest global token fraction, and applies
/// `W -= lr * E^T * dL/dlogits`. The initial weights are supplied by the
/// caller, so collapsed starts (all-zero weights route every token to expert
/// 0 through the tie-break) and balanced starts are both expressible.
///
/// Errors when shapes disagree, when `steps` is zero, when `lr` is not
/// finite and positive, or when the loss leaves the finite domain (the error
/// names the offending step).
pub fn train_gate(
    topology: &ExpertTopology,
    coeffs: &LossCoefficients,
    source: &mut TokenSource,
    init_weights: Matrix,
    steps: usize,
    lr: f64,
) -> Result<GateTrainOutcome> {
    if init_weights.rows() != source.embed_dim() {
        return Err(Error::invalid(format!(
            "weights expect embedding dim {} but source provides {}",
            init_weights.rows(),
            source.embed_dim()
        )));
    }
    if init_weights.cols() != topology.n_experts() {
        return Err(Error::invalid(format!(
            "weights cover {} experts but topology has {}",
            init_weights.cols(),
            topology.n_experts()
        )));
    }
    if steps == 0 {
        return Err(Error::invalid("training needs at least one step"));
    }
    if !lr.is_finite() || lr <= 0.0 {
        return Err(Error::invalid(format!("learning rate must be finite and positive, got {lr}")));
    }

    let mut weights = init_weights;
    let mut trajectory = Vec::with_capacity(steps);
    for step in 0..steps {
        let batch = source.next_batch();
        let gated = gate(&batch, &weights, topology.top_k())?;
        let out = combined_aux_loss(&gated, topology, coeffs)?;
        if !out.loss.is_finite() {
            return Err(Error::numeric(format!("training diverged at step {step}")));
        }
        let frozen = routing_assignments(&gated, topology)?;
        let max_f = frozen.global_fraction.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min_f = frozen.global_fraction.iter().cloned().fold(f64::INFINITY, f64::min);
        trajectory.push(TrainRecord { step, loss: out.loss, max_f, min_f });

        let weight_grad = batch.transpose_matmul(&out.logit_grad)?;
        weights.sub_scaled(lr, &weight_grad)?;
        if !weights.is_finite() {
            return Err(Error::numeric(format!("weights diverged at step {step}")));
        }
    }
    Ok(GateTrainOutcome { trajectory, weights })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_source_is_reproducible() {
        let mut a = TokenSource::new(42, 4, 8).unwrap();
        let mut b = TokenSource::new(42, 4, 8).unwrap();
        for _ in 0..5 {
            assert_eq!(a.next_batch().as_slice(), b.next_batch().as_slice());
        }
    }

    #[test]
    fn training_is_deterministic_for_equal_seeds() {
        let topo = ExpertTopology::new(2, 2, 2, 1).unwrap();
        let coeffs = LossCoefficients::default();
        let run = |seed| {
            let mut src = TokenSource::new(seed, 8, 64).unwrap();
            train_gate(&topo, &coeffs, &mut src, Matrix::zeros(8, 8), 20, 100.0).unwrap()
        };
        let a = run(42);
        let b = run(42);
        assert_eq!(a.trajectory.len(), b.trajectory.len());
        for (x, y) in a.trajectory.iter().zip(&b.trajectory) {
            assert_eq!(x.loss.to_bits(), y.loss.to_bits());
            assert_eq!(x.max_f.to_bits(), y.max_f.to_bits());
        }
        assert_eq!(a.weights.as_slice(), b.weights.as_slice());
    }

    #[test]
    fn collapsed_start_reports_full_mass_on_expert_zero() {
        let topo = ExpertTopology::new(2, 2, 2, 1).unwrap();
        let coeffs = LossCoefficients::default();
        let mut src = TokenSource::new(7, 8, 32).unwrap();
        let out =
            train_gate(&topo, &coeffs, &mut src, Matrix::zeros(8, 8), 1, 100.0).unwrap();
        assert_eq!(out.trajectory[0].max_f, 1.0);
        assert_eq!(out.trajectory[0].min_f, 0.0);
    }

    #[test]
    fn train_gate_validates_arguments() {
        let topo = ExpertTopology::new(2, 2, 2, 1).unwrap();
        let coeffs = LossCoefficients::default();
        let mut src = TokenSource::new(1, 8, 16).unwrap();
        assert!(train_gate(&topo, &coeffs, &mut src, Matrix::zeros(4, 8), 1, 0.1).is_err());
        assert!(train_gate(&topo, &coeffs, &mut src, Matrix::zeros(8, 4), 1, 0.1).is_err());
        assert!(train_gate(&topo, &coeffs, &mut src, Matrix::zeros(8, 8), 0, 0.1).is_err());
        assert!(train_gate(&topo, &coeffs, &mut src, Matrix::zeros(8, 8), 1, 0.0).is_err());
        assert!(train_gate(&topo, &coeffs, &mut src, Matrix::zeros(8, 8), 1, f64::NAN).is_err());
    }
}
