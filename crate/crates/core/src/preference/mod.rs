//! Preference-pair construction and scoring: Bradley-Terry and DPO losses
//! with analytically verified gradients, response log-probabilities, a
//! persistent reference log-prob cache, shared-prefix scoring that reuses
//! the prompt KV state across both branches of a pair, and a small DPO
//! trainer over a frozen trunk.

mod cache;
mod sampling;
mod trainer;

pub use cache::LogProbCache;
pub use sampling::{pair_from_candidates, sample_and_pair, sample_candidates};
pub use trainer::{DpoStepRecord, DpoTrainer, RefSource};

use crate::attention::{decode_step, KvCache, ToyTransformer};
use crate::numkit::log_softmax;
use crate::{Error, Result};

/// Which side of a preference pair a value belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Branch {
    Chosen,
    Rejected,
}

impl Branch {
    pub(crate) fn to_byte(self) -> u8 {
        match self {
            Branch::Chosen => 0,
            Branch::Rejected => 1,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Result<Branch> {
        match b {
            0 => Ok(Branch::Chosen),
            1 => Ok(Branch::Rejected),
            other => Err(Error::format(format!("invalid branch byte {other}"))),
        }
    }
}

/// A prompt with a preferred and a dispreferred response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferencePair {
    pair_id: u64,
    prompt: Vec<usize>,
    chosen: Vec<usize>,
    rejected: Vec<usize>,
}

impl PreferencePair {
    /// The prompt may be empty; each response must be scoreable, meaning at
    /// least one of its tokens has conditioning context (so with an empty
    /// prompt a response needs at least two tokens).
    pub fn new(
        pair_id: u64,
        prompt: Vec<usize>,
        chosen: Vec<usize>,
        rejected: Vec<usize>,
    ) -> Result<Self> {
        let min_len = if prompt.is_empty() { 2 } else { 1 };
        for (name, resp) in [("chosen", &chosen), ("rejected", &rejected)] {
            if resp.len() < min_len {
                return Err(Error::invalid(format!(
                    "{name} response of pair {pair_id} has {} tokens; needs at least {min_len} \
                     (the first token of a promptless sequence has no context to be scored from)",
                    resp.len()
                )));
            }
        }
        Ok(PreferencePair { pair_id, prompt, chosen, rejected })
    }

    pub fn pair_id(&self) -> u64 {
        self.pair_id
    }

    pub fn prompt(&self) -> &[usize] {
        &self.prompt
    }

    pub fn chosen(&self) -> &[usize] {
        &self.chosen
    }

    pub fn rejected(&self) -> &[usize] {
        &self.rejected
    }

    pub fn response(&self, branch: Branch) -> &[usize] {
        match branch {
            Branch::Chosen => &self.chosen,
            Branch::Rejected => &self.rejected,
        }
    }
}

/// `log(sigmoid(x))` computed without overflow for any finite `x`.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Bradley-Terry loss for one comparison.
#[derive(Debug, Clone, Copy)]
pub struct BtLoss {
    pub loss: f64,
    pub grad_chosen: f64,
    pub grad_rejected: f64,
}

/// `-log sigmoid(chosen_score - rejected_score)` with analytic gradients
/// with respect to the two scores.
pub fn bt_loss(chosen_score: f64, rejected_score: f64) -> Result<BtLoss> {
    if !chosen_score.is_finite() || !rejected_score.is_finite() {
        return Err(Error::invalid("scores must be finite"));
    }
    let delta = chosen_score - rejected_score;
    let slack = 1.0 - sigmoid(delta);
    Ok(BtLoss { loss: -log_sigmoid(delta), grad_chosen: -slack, grad_rejected: slack })
}

/// DPO loss for one pair.
#[derive(Debug, Clone, Copy)]
pub struct DpoLoss {
    pub loss: f64,
    /// `beta * ((pi_w - pi_w_ref) - (pi_l - pi_l_ref))`.
    pub margin: f64,
    /// Gradient with respect to the policy's chosen log-probability.
    pub grad_policy_chosen: f64,
    /// Gradient with respect to the policy's rejected log-probability.
    pub grad_policy_rejected: f64,
}

/// DPO hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct DpoConfig {
    pub beta: f64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        DpoConfig { beta: 0.1 }
    }
}

impl DpoConfig {
    pub fn new(beta: f64) -> Result<Self> {
        if !beta.is_finite() || beta <= 0.0 {
            return Err(Error::invalid(format!("beta must be finite and positive, got {beta}")));
        }
        Ok(DpoConfig { beta })
    }
}

/// `-log sigmoid(beta * ((pi_w - pi_w_ref) - (pi_l - pi_l_ref)))` with
/// analytic gradients with respect to the policy log-probabilities (the
/// reference terms are constants).
pub fn dpo_loss(
    policy_chosen: f64,
    policy_rejected: f64,
    reference_chosen: f64,
    reference_rejected: f64,
    config: &DpoConfig,
) -> Result<DpoLoss> {
    for (name, v) in [
        ("policy chosen", policy_chosen),
        ("policy rejected", policy_rejected),
        ("reference chosen", reference_chosen),
        ("reference rejected", reference_rejected),
    ] {
        if !v.is_finite() {
            return Err(Error::invalid(format!("{name} log-probability is not finite")));
        }
    }
    let margin =
        config.beta * ((policy_chosen - reference_chosen) - (policy_rejected - reference_rejected));
    let slack = 1.0 - sigmoid(margin);
    Ok(DpoLoss {
        loss: -log_sigmoid(margin),
        margin,
        grad_policy_chosen: -config.beta * slack,
        grad_policy_rejected: config.beta * slack,
    })
}

/// Sum of `log p(response_i | prompt, response_{<i})` under `model`'s tied
/// readout, from one full forward pass over the concatenated sequence.
///
/// With an empty prompt the first response token has no conditioning context
/// and is skipped; [`PreferencePair::new`] guarantees at least one scoreable
/// token remains.
pub fn response_logp(model: &ToyTransformer, prompt: &[usize], response: &[usize]) -> Result<f64> {
    if response.is_empty() {
        return Err(Error::invalid("response is empty"));
    }
    if prompt.is_empty() && response.len() < 2 {
        return Err(Error::invalid(
            "a promptless response needs at least 2 tokens to have a scoreable suffix",
        ));
    }
    let mut seq = prompt.to_vec();
    seq.extend_from_slice(response);
    let logits = model.forward_full(&seq)?;
    let mut total = 0.0;
    for (i, &tok) in response.iter().enumerate() {
        let pos = prompt.len() + i;
        if pos == 0 {
            continue;
        }
        let logp = log_softmax(logits.row(pos - 1))?;
        total += logp[tok];
    }
    Ok(total)
}

/// Builds a reference cache holding both branch log-probabilities of every
/// pair under `model`. Pair ids must be unique.
pub fn build_logp_cache(model: &ToyTransformer, pairs: &[PreferencePair]) -> Result<LogProbCache> {
    let mut cache = LogProbCache::new();
    for pair in pairs {
        for branch in [Branch::Chosen, Branch::Rejected] {
            let logp = response_logp(model, pair.prompt(), pair.response(branch))?;
            cache.insert(pair.pair_id(), branch, logp)?;
        }
    }
    Ok(cache)
}

/// Result of scoring one pair through the incremental decoder with the
/// prompt's KV state shared between branches.
#[derive(Debug, Clone, Copy)]
pub struct SharedPrefixScore {
    pub pair_id: u64,
    pub chosen_logp: f64,
    pub rejected_logp: f64,
    /// Prompt tokens whose decode work the second branch skipped by
    /// restoring the prompt checkpoint instead of re-decoding.
    pub prompt_tokens_reused: usize,
}

/// Decodes `tokens` through `cache`, adding each token's log-probability
/// under the logits produced just before it. `last_logits` carries the
/// logits from the previously decoded token (the prompt's final logits when
/// starting a response); it is updated in place so scoring can continue.
fn walk_tokens(
    model: &ToyTransformer,
    cache: &mut KvCache,
    last_logits: &mut Option<Vec<f64>>,
    tokens: &[usize],
) -> Result<f64> {
    let vocab = model.config().vocab_size;
    if let Some(&t) = tokens.iter().find(|&&t| t >= vocab) {
        return Err(Error::invalid(format!(
            "token id {t} out of range for vocabulary of {vocab}"
        )));
    }
    let mut total = 0.0;
    for &tok in tokens {
        if let Some(logits) = last_logits.as_deref() {
            total += log_softmax(logits)?[tok];
        }
        *last_logits = Some(decode_step(model, cache, tok)?);
    }
    Ok(total)
}

/// Scores both branches of `pair` by decoding the prompt once, snapshotting
/// the cache, scoring the chosen branch, restoring the snapshot, and scoring
/// the rejected branch. Matches [`response_logp`] on both branches while
/// decoding the prompt a single time.
pub fn score_pair_shared_prefix(
    model: &ToyTransformer,
    pair: &PreferencePair,
) -> Result<SharedPrefixScore> {
    let mut cache = model.new_cache()?;
    let mut last_logits = None;
    walk_tokens(model, &mut cache, &mut last_logits, pair.prompt())?;
    let checkpoint = cache.checkpoint();
    let prompt_logits = last_logits.clone();
    let chosen_logp = walk_tokens(model, &mut cache, &mut last_logits, pair.chosen())?;
    cache.restore(&checkpoint)?;
    let mut last_logits = prompt_logits;
    let rejected_logp = walk_tokens(model, &mut cache, &mut last_logits, pair.rejected())?;
    Ok(SharedPrefixScore {
        pair_id: pair.pair_id(),
        chosen_logp,
        rejected_logp,
        prompt_tokens_reused: pair.prompt().len(),
    })
}

/// Scheduling order for scoring a batch of pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreOrder {
    /// Finish each pair (chosen then rejected) before the next pair.
    PairByPair,
    /// Score every pair's chosen branch first, then every rejected branch,
    /// keeping each pair's prompt checkpoint alive in between.
    ChosenBlockFirst,
}

/// Scores `pairs` with shared-prefix reuse in the given order. Both orders
/// produce identical scores; the block order demonstrates that checkpoints
/// stay valid while other work is interleaved.
pub fn score_pairs(
    model: &ToyTransformer,
    pairs: &[PreferencePair],
    order: ScoreOrder,
) -> Result<Vec<SharedPrefixScore>> {
    match order {
        ScoreOrder::PairByPair => {
            pairs.iter().map(|p| score_pair_shared_prefix(model, p)).collect()
        }
        ScoreOrder::ChosenBlockFirst => {
            let mut parked = Vec::with_capacity(pairs.len());
            let mut scores = Vec::with_capacity(pairs.len());
            for pair in pairs {
                let mut cache = model.new_cache()?;
                let mut last_logits = None;
                walk_tokens(model, &mut cache, &mut last_logits, pair.prompt())?;
                let checkpoint = cache.checkpoint();
                let prompt_logits = last_logits.clone();
                let chosen_logp = walk_tokens(model, &mut cache, &mut last_logits, pair.chosen())?;
                scores.push(SharedPrefixScore {
                    pair_id: pair.pair_id(),
                    chosen_logp,
                    rejected_logp: 0.0,
                    prompt_tokens_reused: pair.prompt().len(),
                });
                parked.push((cache, checkpoint, prompt_logits));
            }
            for ((pair, score), (mut cache, checkpoint, prompt_logits)) in
                pairs.iter().zip(&mut scores).zip(parked)
            {
                cache.restore(&checkpoint)?;
                let mut last_logits = prompt_logits;
                score.rejected_logp =
                    walk_tokens(model, &mut cache, &mut last_logits, pair.rejected())?;
            }
            Ok(scores)
        }
    }
}

#[cfg(test)]
pub(crate) fn test_model(seed: u64) -> ToyTransformer {
    use crate::attention::{LayerPattern, ModelConfig};
    let config = ModelConfig {
        vocab_size: 13,
        n_heads: 2,
        head_dim: 4,
        n_layers: 4,
        pattern: LayerPattern::parse("1:1", 4, true).unwrap(),
        rope_base: 10000.0,
    };
    ToyTransformer::new(config, &mut crate::numkit::Rng::new(seed)).unwrap()
}

#[cfg(test)]
pub(crate) fn test_pairs(model: &ToyTransformer, n: usize, seed: u64) -> Vec<PreferencePair> {
    let vocab = model.config().vocab_size;
    let mut rng = crate::numkit::Rng::new(seed);
    (0..n)
        .map(|i| {
            let draw = |rng: &mut crate::numkit::Rng, len: usize| -> Vec<usize> {
                (0..len).map(|_| rng.below(vocab)).collect()
            };
            let prompt_len = 2 + rng.below(4);
            let prompt = draw(&mut rng, prompt_len);
            let chosen_len = 2 + rng.below(3);
            let chosen = draw(&mut rng, chosen_len);
            let rejected_len = 2 + rng.below(3);
            let rejected = draw(&mut rng, rejected_len);
            PreferencePair::new(i as u64, prompt, chosen, rejected).unwrap()
        })
        .collect()
}
