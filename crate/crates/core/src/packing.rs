//! Sample packing: placing variable-length samples into fixed-capacity
//! sequences, block-causal attention masks that keep packed samples
//! independent, and loss reweighting that restores equal per-sample
//! contributions.
//!
//! The core claim, verified by [`packed_loss_check`], is that packing with a
//! block-causal mask is transparent: every per-token loss matches the loss
//! the same sample produces when run alone, because rotary embeddings make
//! attention scores depend only on relative positions and the mask removes
//! all cross-sample interaction.

use std::fmt;
use std::str::FromStr;

use crate::attention::ToyTransformer;
use crate::numkit::log_softmax;
use crate::{Error, Result};

/// Where one sample landed inside a packed sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleSpan {
    /// Index of the sample in the batch that was packed.
    pub sample_id: usize,
    /// Offset of the sample's first token within the packed sequence.
    pub start: usize,
    /// Number of tokens.
    pub length: usize,
}

/// Packing strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PackPolicy {
    /// Place each sample, in input order, into the first sequence with room.
    FirstFit,
    /// Sort samples by descending length (ties keep input order), then
    /// first-fit. Tends to fill sequences tighter.
    GreedyDescending,
}

impl FromStr for PackPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first_fit" => Ok(PackPolicy::FirstFit),
            "greedy_descending" => Ok(PackPolicy::GreedyDescending),
            other => Err(Error::invalid(format!(
                "unknown packing policy '{other}' (expected first_fit or greedy_descending)"
            ))),
        }
    }
}

impl fmt::Display for PackPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PackPolicy::FirstFit => "first_fit",
            PackPolicy::GreedyDescending => "greedy_descending",
        })
    }
}

/// One packed sequence: concatenated sample tokens plus span bookkeeping.
#[derive(Debug, Clone)]
pub struct PackedSequence {
    tokens: Vec<usize>,
    spans: Vec<SampleSpan>,
}

impl PackedSequence {
    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn spans(&self) -> &[SampleSpan] {
        &self.spans
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Result of packing one batch of samples.
#[derive(Debug, Clone)]
pub struct PackedBatch {
    sequences: Vec<PackedSequence>,
    n_samples: usize,
    capacity: usize,
}

impl PackedBatch {
    pub fn sequences(&self) -> &[PackedSequence] {
        &self.sequences
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Fraction of sequence capacity holding real tokens.
    pub fn utilization(&self) -> f64 {
        if self.sequences.is_empty() {
            return 0.0;
        }
        let used: usize = self.sequences.iter().map(|s| s.len()).sum();
        used as f64 / (self.sequences.len() * self.capacity) as f64
    }
}

fn validate_samples(samples: &[Vec<usize>], capacity: usize) -> Result<()> {
    if capacity == 0 {
        return Err(Error::invalid("sequence capacity must be at least 1"));
    }
    if samples.is_empty() {
        return Err(Error::invalid("no samples to pack"));
    }
    for (i, s) in samples.iter().enumerate() {
        if s.len() < 2 {
            return Err(Error::invalid(format!(
                "sample {i} has {} tokens; samples need at least 2 (one conditioning token, one loss token)",
                s.len()
            )));
        }
        if s.len() > capacity {
            return Err(Error::invalid(format!(
                "sample {i} has {} tokens but sequences hold {capacity}",
                s.len()
            )));
        }
    }
    Ok(())
}

/// Packs `samples` into sequences of at most `capacity` tokens.
///
/// Span `sample_id`s always refer to positions in the input slice, whatever
/// the policy's placement order.
pub fn pack(samples: &[Vec<usize>], capacity: usize, policy: PackPolicy) -> Result<PackedBatch> {
    validate_samples(samples, capacity)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    if policy == PackPolicy::GreedyDescending {
        order.sort_by_key(|&i| std::cmp::Reverse(samples[i].len()));
    }
    let mut sequences: Vec<PackedSequence> = Vec::new();
    for &id in &order {
        let len = samples[id].len();
        let slot = sequences.iter().position(|s| s.len() + len <= capacity);
        let seq = match slot {
            Some(i) => &mut sequences[i],
            None => {
                sequences.push(PackedSequence { tokens: Vec::new(), spans: Vec::new() });
                sequences.last_mut().expect("just pushed")
            }
        };
        seq.spans.push(SampleSpan { sample_id: id, start: seq.tokens.len(), length: len });
        seq.tokens.extend_from_slice(&samples[id]);
    }
    Ok(PackedBatch { sequences, n_samples: samples.len(), capacity })
}

/// Block-causal attention mask for one packed sequence, row-major over
/// `total_len * total_len` entries: position `t` may attend position `s` iff
/// both lie in the same span and `s <= t`.
///
/// Positions no span covers (padding) attend nothing and are attended by
/// nothing. Spans must be disjoint and within `total_len`.
pub fn bca_mask(spans: &[SampleSpan], total_len: usize) -> Result<Vec<bool>> {
    let mut owner: Vec<Option<usize>> = vec![None; total_len];
    for (i, span) in spans.iter().enumerate() {
        if span.length == 0 {
            return Err(Error::invalid(format!("span {i} is empty")));
        }
        let end = span.start.checked_add(span.length).filter(|&e| e <= total_len).ok_or_else(
            || {
                Error::invalid(format!(
                    "span {i} ({}..{}) exceeds sequence length {total_len}",
                    span.start,
                    span.start + span.length
                ))
            },
        )?;
        for slot in &mut owner[span.start..end] {
            if slot.is_some() {
                return Err(Error::invalid(format!("span {i} overlaps an earlier span")));
            }
            *slot = Some(i);
        }
    }
    let mut mask = vec![false; total_len * total_len];
    for t in 0..total_len {
        if let Some(a) = owner[t] {
            for s in 0..=t {
                if owner[s] == Some(a) {
                    mask[t * total_len + s] = true;
                }
            }
        }
    }
    Ok(mask)
}

/// Per-position loss weights for a packed batch.
///
/// Sample `j` contributes loss on its last `c_j` positions, each weighted
/// `1 / (n_samples * c_j)`, so every sample contributes equally (weight
/// `1/n_samples` in total) regardless of length and the batch's weights sum
/// to 1. `loss_token_counts[sample_id]` overrides the default
/// `length - 1` (all tokens after the span's first); counts must satisfy
/// `1 <= c_j <= length - 1`.
pub fn reweight(batch: &PackedBatch, loss_token_counts: Option<&[usize]>) -> Result<Vec<Vec<f64>>> {
    if let Some(counts) = loss_token_counts {
        if counts.len() != batch.n_samples {
            return Err(Error::invalid(format!(
                "{} loss token counts for {} samples",
                counts.len(),
                batch.n_samples
            )));
        }
    }
    let n = batch.n_samples as f64;
    let mut weights: Vec<Vec<f64>> =
        batch.sequences.iter().map(|s| vec![0.0; s.len()]).collect();
    for (seq, w) in batch.sequences.iter().zip(&mut weights) {
        for span in &seq.spans {
            let c = match loss_token_counts {
                Some(counts) => counts[span.sample_id],
                None => span.length - 1,
            };
            if c == 0 || c > span.length - 1 {
                return Err(Error::invalid(format!(
                    "sample {} asks for {c} loss tokens; must be within 1..={}",
                    span.sample_id,
                    span.length - 1
                )));
            }
            let per = 1.0 / (n * c as f64);
            for i in span.length - c..span.length {
                w[span.start + i] = per;
            }
        }
    }
    Ok(weights)
}

fn span_losses(
    tokens: &[usize],
    logits: &crate::numkit::Matrix,
    span_start: usize,
    span_len: usize,
) -> Result<Vec<f64>> {
    let mut losses = Vec::with_capacity(span_len - 1);
    for i in 1..span_len {
        let logp = log_softmax(logits.row(span_start + i - 1))?;
        losses.push(-logp[tokens[span_start + i]]);
    }
    Ok(losses)
}

/// Per-token losses for every sample in a packed batch, indexed by
/// `sample_id`. Token `i` of a sample (for `i >= 1`) is scored against the
/// logits the model produced at the previous position of its span.
///
/// With `use_bca` the forward pass applies the block-causal mask; without it
/// samples see earlier samples in the same sequence, which is exactly the
/// contamination the mask exists to remove.
pub fn packed_losses(
    model: &ToyTransformer,
    batch: &PackedBatch,
    use_bca: bool,
) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::new(); batch.n_samples];
    for seq in &batch.sequences {
        let n = seq.len();
        let positions: Vec<usize> = (0..n).collect();
        let mask = if use_bca { Some(bca_mask(&seq.spans, n)?) } else { None };
        let logits = model.forward_masked(seq.tokens(), &positions, mask.as_deref())?;
        for span in &seq.spans {
            out[span.sample_id] = span_losses(seq.tokens(), &logits, span.start, span.length)?;
        }
    }
    Ok(out)
}

/// Per-token losses for each sample run alone (positions `0..len`).
pub fn isolated_losses(model: &ToyTransformer, samples: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
    samples
        .iter()
        .map(|sample| {
            let logits = model.forward_full(sample)?;
            span_losses(sample, &logits, 0, sample.len())
        })
        .collect()
}

/// Outcome of comparing packed against isolated per-token losses.
#[derive(Debug, Clone)]
pub struct PackedLossReport {
    pub policy: PackPolicy,
    pub n_samples: usize,
    pub n_sequences: usize,
    pub utilization: f64,
    /// Largest |packed - isolated| over every loss token.
    pub max_abs_diff: f64,
}

/// Packs `samples`, runs them packed (optionally with the block-causal mask)
/// and isolated, and reports the largest per-token loss discrepancy.
pub fn packed_loss_check(
    model: &ToyTransformer,
    samples: &[Vec<usize>],
    capacity: usize,
    policy: PackPolicy,
    use_bca: bool,
) -> Result<PackedLossReport> {
    let batch = pack(samples, capacity, policy)?;
    let packed = packed_losses(model, &batch, use_bca)?;
    let isolated = isolated_losses(model, samples)?;
    let mut max_abs_diff = 0.0f64;
    for (p, i) in packed.iter().zip(&isolated) {
        debug_assert_eq!(p.len(), i.len());
        for (a, b) in p.iter().zip(i) {
            max_abs_diff = max_abs_diff.max((a - b).abs());
        }
    }
    Ok(PackedLossReport {
        policy,
        n_samples: samples.len(),
        n_sequences: batch.sequences().len(),
        utilization: batch.utilization(),
        max_abs_diff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{LayerPattern, ModelConfig};
    use crate::numkit::Rng;

    fn lengths(batch: &PackedBatch) -> Vec<Vec<usize>> {
        batch
            .sequences()
            .iter()
            .map(|s| s.spans().iter().map(|sp| sp.sample_id).collect())
            .collect()
    }

    fn samples_of_lengths(lens: &[usize], vocab: usize, seed: u64) -> Vec<Vec<usize>> {
        let mut rng = Rng::new(seed);
        lens.iter()
            .map(|&l| (0..l).map(|_| rng.below(vocab)).collect())
            .collect()
    }

    #[test]
    fn first_fit_places_in_input_order() {
        let samples = samples_of_lengths(&[4, 3, 5, 2, 6], 11, 1);
        let batch = pack(&samples, 10, PackPolicy::FirstFit).unwrap();
        assert_eq!(lengths(&batch), vec![vec![0, 1, 3], vec![2], vec![4]]);
        let spans = batch.sequences()[0].spans();
        assert_eq!(spans[1], SampleSpan { sample_id: 1, start: 4, length: 3 });
        assert_eq!(spans[2], SampleSpan { sample_id: 3, start: 7, length: 2 });
        assert!((batch.utilization() - 20.0 / 30.0).abs() < 1e-15);
    }

    #[test]
    fn greedy_descending_packs_tighter() {
        let samples = samples_of_lengths(&[4, 3, 5, 2, 6], 11, 1);
        let batch = pack(&samples, 10, PackPolicy::GreedyDescending).unwrap();
        assert_eq!(lengths(&batch), vec![vec![4, 0], vec![2, 1, 3]]);
        assert_eq!(batch.utilization(), 1.0);
        let ff = pack(&samples, 10, PackPolicy::FirstFit).unwrap();
        assert!(batch.utilization() > ff.utilization());
    }

    #[test]
    fn greedy_tie_break_keeps_input_order() {
        let samples = samples_of_lengths(&[3, 3, 3], 11, 2);
        let batch = pack(&samples, 3, PackPolicy::GreedyDescending).unwrap();
        assert_eq!(lengths(&batch), vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn packed_tokens_are_the_concatenated_samples() {
        let samples = samples_of_lengths(&[4, 3], 11, 3);
        let batch = pack(&samples, 8, PackPolicy::FirstFit).unwrap();
        let mut expected = samples[0].clone();
        expected.extend_from_slice(&samples[1]);
        assert_eq!(batch.sequences()[0].tokens(), &expected[..]);
    }

    #[test]
    fn pack_validates_inputs() {
        assert!(pack(&[], 8, PackPolicy::FirstFit).is_err());
        assert!(pack(&[vec![1]], 8, PackPolicy::FirstFit).is_err());
        assert!(pack(&[vec![1, 2, 3]], 2, PackPolicy::FirstFit).is_err());
        assert!(pack(&[vec![1, 2]], 0, PackPolicy::FirstFit).is_err());
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("first_fit".parse::<PackPolicy>().unwrap(), PackPolicy::FirstFit);
        assert_eq!(
            "greedy_descending".parse::<PackPolicy>().unwrap(),
            PackPolicy::GreedyDescending
        );
        assert!("best_fit".parse::<PackPolicy>().is_err());
        assert_eq!(PackPolicy::GreedyDescending.to_string(), "greedy_descending");
    }

    #[test]
    fn mask_isolates_spans_and_padding() {
        let spans = [
            SampleSpan { sample_id: 0, start: 0, length: 3 },
            SampleSpan { sample_id: 1, start: 3, length: 2 },
        ];
        let mask = bca_mask(&spans, 6).unwrap();
        let at = |t: usize, s: usize| mask[t * 6 + s];
        assert!(at(2, 0) && at(2, 1) && at(2, 2));
        assert!(!at(2, 3) && !at(0, 1)); // no future, no cross-span
        assert!(at(4, 3) && at(4, 4) && !at(4, 2) && !at(4, 0));
        for s in 0..6 {
            assert!(!at(5, s), "padding row must attend nothing");
            assert!(!at(s, 5), "padding column must be hidden");
        }
    }

    #[test]
    fn mask_rejects_overlap_and_overflow() {
        let overlap = [
            SampleSpan { sample_id: 0, start: 0, length: 3 },
            SampleSpan { sample_id: 1, start: 2, length: 2 },
        ];
        assert!(bca_mask(&overlap, 6).is_err());
        let outside = [SampleSpan { sample_id: 0, start: 4, length: 3 }];
        assert!(bca_mask(&outside, 6).is_err());
    }

    #[test]
    fn weights_sum_to_one_and_split_evenly_per_sample() {
        let samples = samples_of_lengths(&[4, 3, 5, 2, 6], 11, 4);
        let batch = pack(&samples, 10, PackPolicy::GreedyDescending).unwrap();
        let weights = reweight(&batch, None).unwrap();
        let total: f64 = weights.iter().flatten().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let mut per_sample = vec![0.0; samples.len()];
        for (seq, w) in batch.sequences().iter().zip(&weights) {
            for span in seq.spans() {
                // first token of each span carries no loss weight
                assert_eq!(w[span.start], 0.0);
                per_sample[span.sample_id] +=
                    w[span.start..span.start + span.length].iter().sum::<f64>();
            }
        }
        for s in per_sample {
            assert!((s - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn explicit_loss_counts_override_and_are_validated() {
        let samples = samples_of_lengths(&[4, 3], 11, 5);
        let batch = pack(&samples, 8, PackPolicy::FirstFit).unwrap();
        let weights = reweight(&batch, Some(&[2, 1])).unwrap();
        let w = &weights[0];
        assert_eq!(w[0], 0.0);
        assert_eq!(w[1], 0.0);
        assert!((w[2] - 0.25).abs() < 1e-15); // 1/(2 samples * 2 tokens)
        assert!((w[3] - 0.25).abs() < 1e-15);
        assert_eq!(w[4], 0.0);
        assert_eq!(w[5], 0.0);
        assert!((w[6] - 0.5).abs() < 1e-15); // 1/(2 samples * 1 token)
        assert!(reweight(&batch, Some(&[4, 1])).is_err()); // > length-1
        assert!(reweight(&batch, Some(&[0, 1])).is_err());
        assert!(reweight(&batch, Some(&[2])).is_err());
    }

    #[test]
    fn pigeonholed_samples_each_get_their_own_sequence() {
        let samples = samples_of_lengths(&[5, 5, 5], 11, 6);
        let batch = pack(&samples, 8, PackPolicy::FirstFit).unwrap();
        assert_eq!(batch.sequences().len(), 3);
        assert!(batch.sequences().iter().all(|s| s.spans().len() == 1));
    }

    #[test]
    fn fifty_seeded_lengths_conserve_tokens_and_stay_disjoint() {
        let mut rng = Rng::new(12);
        let lens: Vec<usize> = (0..50).map(|_| 2 + rng.below(59)).collect();
        let samples = samples_of_lengths(&lens, 11, 13);
        for policy in [PackPolicy::FirstFit, PackPolicy::GreedyDescending] {
            let batch = pack(&samples, 512, policy).unwrap();
            let span_total: usize = batch
                .sequences()
                .iter()
                .flat_map(|s| s.spans())
                .map(|sp| sp.length)
                .sum();
            assert_eq!(span_total, lens.iter().sum::<usize>());

            let mut seen = vec![0usize; samples.len()];
            for seq in batch.sequences() {
                // Brute-force overlap check within the sequence.
                let mut owner = vec![None; 512];
                for span in seq.spans() {
                    assert_eq!(span.length, lens[span.sample_id]);
                    seen[span.sample_id] += 1;
                    for slot in &mut owner[span.start..span.start + span.length] {
                        assert!(slot.is_none(), "{policy} produced overlapping spans");
                        *slot = Some(span.sample_id);
                    }
                }
            }
            assert!(seen.iter().all(|&c| c == 1), "every sample packs exactly once");
        }
    }

    #[test]
    fn mask_isolation_is_exhaustive_at_capacity_64() {
        let mut rng = Rng::new(14);
        let lens: Vec<usize> = (0..9).map(|_| 2 + rng.below(20)).collect();
        let samples = samples_of_lengths(&lens, 11, 15);
        let batch = pack(&samples, 64, PackPolicy::FirstFit).unwrap();
        assert!(batch.sequences().len() > 1);
        for seq in batch.sequences() {
            let mask = bca_mask(seq.spans(), 64).unwrap();
            // Independent oracle: embed a causal triangle per span into zeros.
            let mut oracle = vec![false; 64 * 64];
            for span in seq.spans() {
                for i in 0..span.length {
                    for j in 0..=i {
                        oracle[(span.start + i) * 64 + (span.start + j)] = true;
                    }
                }
            }
            assert_eq!(mask, oracle);
        }
    }

    /// Accumulates exact fractions; weights enter as their defining rational
    /// 1/(n*c) after the f64 value is checked against that construction.
    struct Frac {
        num: u128,
        den: u128,
    }

    impl Frac {
        fn zero() -> Self {
            Frac { num: 0, den: 1 }
        }

        fn add_unit(&mut self, den: u128) {
            // self += 1/den
            self.num = self.num * den + self.den;
            self.den *= den;
            let g = gcd(self.num, self.den);
            self.num /= g;
            self.den /= g;
        }
    }

    fn gcd(a: u128, b: u128) -> u128 {
        if b == 0 {
            a.max(1)
        } else {
            gcd(b, a % b)
        }
    }

    #[test]
    fn per_sample_weight_sums_are_exactly_one_over_n_as_rationals() {
        let mut seed_rng = Rng::new(16);
        for _ in 0..20 {
            let n = 2 + seed_rng.below(5);
            let lens: Vec<usize> = (0..n).map(|_| 2 + seed_rng.below(30)).collect();
            let samples = samples_of_lengths(&lens, 11, seed_rng.next_u64());
            let batch = pack(&samples, 64, PackPolicy::FirstFit).unwrap();
            let weights = reweight(&batch, None).unwrap();

            let mut sums: Vec<Frac> = (0..n).map(|_| Frac::zero()).collect();
            for (seq, w) in batch.sequences().iter().zip(&weights) {
                for span in seq.spans() {
                    let c = span.length - 1;
                    let denom = (n * c) as u128;
                    for &token_weight in &w[span.start + 1..span.start + span.length] {
                        assert_eq!(
                            token_weight.to_bits(),
                            (1.0 / (n as f64 * c as f64)).to_bits(),
                            "weight must be constructed as 1/(n*c)"
                        );
                        sums[span.sample_id].add_unit(denom);
                    }
                }
            }
            for s in &sums {
                assert_eq!((s.num, s.den), (1, n as u128), "sum must reduce to 1/n");
            }
        }
    }

    #[test]
    fn doubling_a_samples_length_leaves_its_weight_share_fixed() {
        let short = samples_of_lengths(&[4, 6], 11, 17);
        let long = samples_of_lengths(&[8, 6], 11, 17);
        let share = |samples: &[Vec<usize>]| -> f64 {
            let batch = pack(samples, 16, PackPolicy::FirstFit).unwrap();
            let weights = reweight(&batch, None).unwrap();
            let mut total = 0.0;
            for (seq, w) in batch.sequences().iter().zip(&weights) {
                for span in seq.spans() {
                    if span.sample_id == 0 {
                        total += w[span.start..span.start + span.length].iter().sum::<f64>();
                    }
                }
            }
            total
        };
        let a = share(&short);
        let b = share(&long);
        assert!((a - 0.5).abs() < 1e-12, "short-batch share {a}");
        assert!((b - 0.5).abs() < 1e-12, "long-batch share {b}");
    }

    fn toy_model(seed: u64) -> ToyTransformer {
        let config = ModelConfig {
            vocab_size: 13,
            n_heads: 2,
            head_dim: 4,
            n_layers: 4,
            pattern: LayerPattern::parse("1:1", 3, true).unwrap(),
            rope_base: 10000.0,
        };
        ToyTransformer::new(config, &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn block_causal_packing_reproduces_isolated_losses() {
        let model = toy_model(7);
        let samples = samples_of_lengths(&[5, 3, 4, 2], 13, 8);
        let report =
            packed_loss_check(&model, &samples, 9, PackPolicy::FirstFit, true).unwrap();
        assert!(report.max_abs_diff < 1e-9, "max diff {}", report.max_abs_diff);
        assert!(report.n_sequences < samples.len());
    }

    #[test]
    fn without_the_mask_later_samples_are_contaminated() {
        let model = toy_model(7);
        let samples = samples_of_lengths(&[5, 3, 4, 2], 13, 8);
        let report =
            packed_loss_check(&model, &samples, 9, PackPolicy::FirstFit, false).unwrap();
        assert!(report.max_abs_diff > 1e-6, "max diff {}", report.max_abs_diff);
    }

    #[test]
    fn padding_rows_do_not_change_span_losses() {
        let model = toy_model(7);
        let samples = samples_of_lengths(&[4, 3], 13, 9);
        let batch = pack(&samples, 7, PackPolicy::FirstFit).unwrap();
        let plain = packed_losses(&model, &batch, true).unwrap();
        // Re-run with two padding tokens appended and the same spans.
        let seq = &batch.sequences()[0];
        let mut tokens = seq.tokens().to_vec();
        tokens.extend_from_slice(&[0, 0]);
        let n = tokens.len();
        let positions: Vec<usize> = (0..n).collect();
        let mask = bca_mask(seq.spans(), n).unwrap();
        let logits = model.forward_masked(&tokens, &positions, Some(&mask)).unwrap();
        for span in seq.spans() {
            for i in 1..span.length {
                let lp = log_softmax(logits.row(span.start + i - 1)).unwrap();
                let loss = -lp[tokens[span.start + i]];
                let diff = (loss - plain[span.sample_id][i - 1]).abs();
                assert!(diff < 1e-12, "span {} token {i}: {diff}", span.sample_id);
            }
        }
    }
}
