//! DPO training over a frozen trunk.
//!
//! The policy keeps the transformer weights fixed and trains only an untied
//! readout matrix, initialized as a copy of the embedding table. That keeps
//! every gradient analytic: for a scored token `x` read out from hidden
//! state `h`, `d log p(x) / d R[v] = (1{v == x} - p_v) * h`. The reference
//! log-probabilities are constants, supplied either from a [`LogProbCache`]
//! or recomputed inline from the frozen model; both routes produce
//! bit-identical training trajectories.

use super::{dpo_loss, response_logp, DpoConfig, LogProbCache, PreferencePair};
use crate::attention::ToyTransformer;
use crate::numkit::{log_softmax, Matrix};
use crate::{Error, Result};

/// Where the reference log-probabilities come from.
#[derive(Debug, Clone, Copy)]
pub enum RefSource<'a> {
    /// Precomputed values, typically from [`build_logp_cache`](super::build_logp_cache).
    Cache(&'a LogProbCache),
    /// Recompute from the frozen model on demand.
    Inline,
}

/// One optimization step's batch statistics, recorded before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpoStepRecord {
    pub step: usize,
    pub loss: f64,
    pub margin: f64,
}

/// Gradient-descent DPO trainer for the readout matrix.
#[derive(Debug, Clone)]
pub struct DpoTrainer {
    model: ToyTransformer,
    readout: Matrix,
    config: DpoConfig,
}

impl DpoTrainer {
    /// The readout starts as a copy of the embedding, so at step zero the
    /// policy equals the reference and the loss is exactly `ln 2`.
    pub fn new(model: ToyTransformer, config: DpoConfig) -> Self {
        let readout = model.embedding().clone();
        DpoTrainer { model, readout, config }
    }

    pub fn model(&self) -> &ToyTransformer {
        &self.model
    }

    pub fn readout(&self) -> &Matrix {
        &self.readout
    }

    /// Policy log-probability of `response` after `prompt`, plus its
    /// gradient with respect to the readout matrix.
    fn policy_logp_and_grad(&self, prompt: &[usize], response: &[usize]) -> Result<(f64, Matrix)> {
        let mut seq = prompt.to_vec();
        seq.extend_from_slice(response);
        let positions: Vec<usize> = (0..seq.len()).collect();
        let hidden = self.model.hidden_states(&seq, &positions, None)?;
        let vocab = self.model.config().vocab_size;
        let mut grad = Matrix::zeros(vocab, self.model.config().model_dim());
        let mut total = 0.0;
        for (i, &tok) in response.iter().enumerate() {
            let pos = prompt.len() + i;
            if pos == 0 {
                continue; // promptless first token has no context
            }
            let h = hidden.row(pos - 1);
            let logits = self.readout.rows_dot(h)?;
            let logp = log_softmax(&logits)?;
            total += logp[tok];
            for (v, lp) in logp.iter().enumerate().take(vocab) {
                let coef = if v == tok { 1.0 - lp.exp() } else { -lp.exp() };
                let row = grad.row_mut(v);
                for (g, &x) in row.iter_mut().zip(h) {
                    *g += coef * x;
                }
            }
        }
        Ok((total, grad))
    }

    /// Policy log-probability alone (no gradient).
    pub fn policy_logp(&self, prompt: &[usize], response: &[usize]) -> Result<f64> {
        Ok(self.policy_logp_and_grad(prompt, response)?.0)
    }

    /// Runs `steps` full-batch gradient-descent steps at learning rate `lr`,
    /// returning per-step loss and margin means measured before each update.
    pub fn run(
        &mut self,
        pairs: &[PreferencePair],
        steps: usize,
        lr: f64,
        ref_source: RefSource<'_>,
    ) -> Result<Vec<DpoStepRecord>> {
        if pairs.is_empty() {
            return Err(Error::invalid("no preference pairs to train on"));
        }
        if steps == 0 {
            return Err(Error::invalid("training needs at least one step"));
        }
        if !lr.is_finite() || lr <= 0.0 {
            return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
        }
        // Resolve the frozen reference terms once.
        let mut references = Vec::with_capacity(pairs.len());
        for pair in pairs {
            let lookup = |branch| match ref_source {
                RefSource::Cache(cache) => cache.get(pair.pair_id(), branch).ok_or_else(|| {
                    Error::state(format!(
                        "reference cache has no {branch:?} entry for pair {}",
                        pair.pair_id()
                    ))
                }),
                RefSource::Inline => response_logp(&self.model, pair.prompt(), pair.response(branch)),
            };
            references.push((lookup(super::Branch::Chosen)?, lookup(super::Branch::Rejected)?));
        }
        let n = pairs.len() as f64;
        let mut trajectory = Vec::with_capacity(steps);
        for step in 0..steps {
            let mut grad = Matrix::zeros(self.readout.rows(), self.readout.cols());
            let mut loss_sum = 0.0;
            let mut margin_sum = 0.0;
            for (pair, &(ref_c, ref_l)) in pairs.iter().zip(&references) {
                let (pc, gc) = self.policy_logp_and_grad(pair.prompt(), pair.chosen())?;
                let (pl, gl) = self.policy_logp_and_grad(pair.prompt(), pair.rejected())?;
                let out = dpo_loss(pc, pl, ref_c, ref_l, &self.config)?;
                loss_sum += out.loss;
                margin_sum += out.margin;
                grad.sub_scaled(-out.grad_policy_chosen, &gc)?;
                grad.sub_scaled(-out.grad_policy_rejected, &gl)?;
            }
            trajectory.push(DpoStepRecord {
                step,
                loss: loss_sum / n,
                margin: margin_sum / n,
            });
            self.readout.sub_scaled(lr / n, &grad)?;
            if !self.readout.is_finite() {
                return Err(Error::numeric(format!("readout diverged at step {step}")));
            }
        }
        Ok(trajectory)
    }
}
