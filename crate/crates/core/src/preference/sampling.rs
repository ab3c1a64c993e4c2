//! On-policy candidate sampling and pair construction.
//!
//! Candidates are decoded from a shared prompt prefix (the prompt is decoded
//! once and its cache checkpoint restored per candidate), sampled from the
//! model's next-token distribution at a per-candidate temperature, scored by
//! an injectable reward function, and paired by taking the highest- and
//! lowest-scoring candidates when their gap is large enough.

use super::PreferencePair;
use crate::attention::{decode_step, ToyTransformer};
use crate::numkit::{softmax, Rng};
use crate::{Error, Result};

/// Draws an index from a probability vector using one uniform variate.
fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    probs.len() - 1 // guard against cum falling short of 1 by rounding
}

/// Samples `n_candidates` responses of `response_len` tokens each from
/// `model`'s next-token distribution after `prompt`.
///
/// Candidate `i` samples at `temperatures[i % temperatures.len()]`: logits
/// are divided by the temperature before the softmax, so small values
/// approach greedy decoding and large values flatten the distribution.
/// The prompt must be non-empty so every sampled token is conditioned; the
/// prompt is decoded once and each candidate restores that checkpoint.
pub fn sample_candidates(
    model: &ToyTransformer,
    prompt: &[usize],
    n_candidates: usize,
    response_len: usize,
    temperatures: &[f64],
    rng: &mut Rng,
) -> Result<Vec<Vec<usize>>> {
    if prompt.is_empty() {
        return Err(Error::invalid("sampling needs a non-empty prompt"));
    }
    if n_candidates == 0 {
        return Err(Error::invalid("need at least one candidate"));
    }
    if response_len == 0 {
        return Err(Error::invalid("responses need at least one token"));
    }
    if temperatures.is_empty() {
        return Err(Error::invalid("need at least one sampling temperature"));
    }
    if let Some(bad) = temperatures.iter().find(|t| !t.is_finite() || **t <= 0.0) {
        return Err(Error::invalid(format!(
            "temperatures must be finite and positive, got {bad}"
        )));
    }
    let mut cache = model.new_cache()?;
    let mut prompt_logits = Vec::new();
    for &tok in prompt {
        prompt_logits = decode_step(model, &mut cache, tok)?;
    }
    let checkpoint = cache.checkpoint();
    let mut candidates = Vec::with_capacity(n_candidates);
    for c in 0..n_candidates {
        let temperature = temperatures[c % temperatures.len()];
        cache.restore(&checkpoint)?;
        let mut logits = prompt_logits.clone();
        let mut response = Vec::with_capacity(response_len);
        for j in 0..response_len {
            let scaled: Vec<f64> = logits.iter().map(|&z| z / temperature).collect();
            let probs = softmax(&scaled)?;
            let tok = sample_index(&probs, rng.next_f64());
            response.push(tok);
            if j + 1 < response_len {
                logits = decode_step(model, &mut cache, tok)?;
            }
        }
        candidates.push(response);
    }
    Ok(candidates)
}

/// Builds a preference pair from scored candidates: chosen is the highest
/// reward, rejected the lowest reward among candidates whose tokens differ
/// from the chosen response (ties pick the lowest index).
///
/// Returns `None` when every candidate is identical to the chosen one or
/// when the reward gap between chosen and rejected falls below `min_gap`.
pub fn pair_from_candidates(
    prompt: &[usize],
    candidates: &[Vec<usize>],
    rewards: &[f64],
    min_gap: f64,
    pair_id: u64,
) -> Result<Option<PreferencePair>> {
    if candidates.len() < 2 {
        return Err(Error::invalid(format!(
            "pairing needs at least 2 candidates, got {}",
            candidates.len()
        )));
    }
    if rewards.len() != candidates.len() {
        return Err(Error::invalid(format!(
            "{} rewards for {} candidates",
            rewards.len(),
            candidates.len()
        )));
    }
    if let Some(bad) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(Error::invalid(format!("rewards must be finite, got {bad}")));
    }
    if !min_gap.is_finite() || min_gap < 0.0 {
        return Err(Error::invalid(format!(
            "min_gap must be finite and non-negative, got {min_gap}"
        )));
    }
    let mut chosen = 0;
    for (i, &r) in rewards.iter().enumerate() {
        if r > rewards[chosen] {
            chosen = i;
        }
    }
    let mut rejected: Option<usize> = None;
    for (i, &r) in rewards.iter().enumerate() {
        if candidates[i] == candidates[chosen] {
            continue;
        }
        match rejected {
            Some(j) if rewards[j] <= r => {}
            _ => rejected = Some(i),
        }
    }
    let Some(rejected) = rejected else {
        return Ok(None); // degenerate: every candidate equals the chosen one
    };
    if rewards[chosen] - rewards[rejected] < min_gap {
        return Ok(None);
    }
    let pair = PreferencePair::new(
        pair_id,
        prompt.to_vec(),
        candidates[chosen].clone(),
        candidates[rejected].clone(),
    )?;
    Ok(Some(pair))
}

/// Samples candidates, scores them with `reward_fn`, and pairs the extremes.
///
/// Returns `None` when the candidates are degenerate (all identical) or the
/// best-minus-worst reward gap is below `min_gap`.
#[allow(clippy::too_many_arguments)]
pub fn sample_and_pair<F>(
    model: &ToyTransformer,
    reward_fn: F,
    prompt: &[usize],
    n_candidates: usize,
    temperatures: &[f64],
    min_gap: f64,
    response_len: usize,
    pair_id: u64,
    rng: &mut Rng,
) -> Result<Option<PreferencePair>>
where
    F: Fn(&[usize]) -> f64,
{
    if n_candidates < 2 {
        return Err(Error::invalid("pairing needs at least 2 candidates"));
    }
    let candidates =
        sample_candidates(model, prompt, n_candidates, response_len, temperatures, rng)?;
    let rewards: Vec<f64> = candidates.iter().map(|c| reward_fn(c)).collect();
    pair_from_candidates(prompt, &candidates, &rewards, min_gap, pair_id)
}
