//! A deliberately small attention-only transformer used to demonstrate that
//! the hybrid cache layout, rotary embeddings, cross-layer KV sharing, and
//! incremental decoding reproduce full-sequence forward passes.
//!
//! Each layer is a residual multi-head attention block (no feed-forward, no
//! normalization): `h += attend(rope(h Wq), rope(h Wk), h Wv) Wo`. Logits tie
//! the readout to the embedding table: `logits = h E^T`.

use super::cache::KvCache;
use super::ops::attend_masked;
use super::rope::{rope_rotate_row, RopeConfig};
use super::{CacheRole, LayerKind, LayerPattern};
use crate::numkit::{Matrix, Rng};
use crate::{Error, Result};

/// Shape and layout parameters for [`ToyTransformer`].
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub n_layers: usize,
    pub pattern: LayerPattern,
    pub rope_base: f64,
}

impl ModelConfig {
    pub fn model_dim(&self) -> usize {
        self.n_heads * self.head_dim
    }
}

#[derive(Debug, Clone)]
struct LayerWeights {
    wq: Matrix,
    wk: Matrix,
    wv: Matrix,
    wo: Matrix,
}

/// Attention-only transformer with a hybrid sliding/full layer stack.
#[derive(Debug, Clone)]
pub struct ToyTransformer {
    config: ModelConfig,
    rope: RopeConfig,
    roles: Vec<CacheRole>,
    kinds: Vec<LayerKind>,
    embedding: Matrix,
    layers: Vec<LayerWeights>,
}

impl ToyTransformer {
    /// Initializes all weights from `rng` with scale `1/sqrt(model_dim)`.
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        if config.vocab_size < 2 {
            return Err(Error::invalid("vocabulary needs at least 2 entries"));
        }
        if config.n_heads == 0 {
            return Err(Error::invalid("model needs at least one head"));
        }
        if config.n_layers == 0 {
            return Err(Error::invalid("model needs at least one layer"));
        }
        let rope = RopeConfig::new(config.rope_base, config.head_dim)?;
        let (roles, _) = config.pattern.cache_plan(config.n_layers)?;
        let kinds = config.pattern.expand(config.n_layers)?;
        let dim = config.model_dim();
        let scale = 1.0 / (dim as f64).sqrt();
        let embedding = Matrix::random(config.vocab_size, dim, scale, rng);
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                wq: Matrix::random(dim, dim, scale, rng),
                wk: Matrix::random(dim, dim, scale, rng),
                wv: Matrix::random(dim, dim, scale, rng),
                wo: Matrix::random(dim, dim, scale, rng),
            })
            .collect();
        Ok(ToyTransformer { config, rope, roles, kinds, embedding, layers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn embedding(&self) -> &Matrix {
        &self.embedding
    }

    pub fn roles(&self) -> &[CacheRole] {
        &self.roles
    }

    /// Empty cache sized for this model.
    pub fn new_cache(&self) -> Result<KvCache> {
        KvCache::new(&self.config.pattern, self.config.n_layers, self.config.model_dim())
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::invalid("token sequence is empty"));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::invalid(format!(
                "token id {t} out of range for vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Applies per-head rotary embeddings to every row of `m` in place.
    fn rope_rows(&self, m: &mut Matrix, positions: &[usize]) {
        let hd = self.config.head_dim;
        for (t, &pos) in positions.iter().enumerate() {
            let row = m.row_mut(t);
            for h in 0..self.config.n_heads {
                rope_rotate_row(&mut row[h * hd..(h + 1) * hd], pos, &self.rope);
            }
        }
    }

    fn head_block(m: &Matrix, head: usize, head_dim: usize) -> Matrix {
        let mut out = Matrix::zeros(m.rows(), head_dim);
        for t in 0..m.rows() {
            out.row_mut(t).copy_from_slice(&m.row(t)[head * head_dim..(head + 1) * head_dim]);
        }
        out
    }

    /// Multi-head masked attention over precomputed (roped) Q/K and V.
    fn attend_heads<F>(&self, q: &Matrix, k: &Matrix, v: &Matrix, allowed: F) -> Result<Matrix>
    where
        F: Fn(usize, usize) -> bool,
    {
        let hd = self.config.head_dim;
        let mut merged = Matrix::zeros(q.rows(), self.config.model_dim());
        for head in 0..self.config.n_heads {
            let qh = Self::head_block(q, head, hd);
            let kh = Self::head_block(k, head, hd);
            let vh = Self::head_block(v, head, hd);
            let oh = attend_masked(&qh, &kh, &vh, &allowed)?;
            for t in 0..merged.rows() {
                merged.row_mut(t)[head * hd..(head + 1) * hd].copy_from_slice(oh.row(t));
            }
        }
        Ok(merged)
    }

    /// Hidden states (pre-readout) for `tokens` placed at absolute
    /// `positions`, with an optional extra row-major `len x len` mask ANDed
    /// into every layer's own causal/sliding mask.
    pub fn hidden_states(
        &self,
        tokens: &[usize],
        positions: &[usize],
        extra_mask: Option<&[bool]>,
    ) -> Result<Matrix> {
        self.check_tokens(tokens)?;
        let n = tokens.len();
        if positions.len() != n {
            return Err(Error::invalid(format!(
                "{} positions supplied for {} tokens",
                positions.len(),
                n
            )));
        }
        if let Some(mask) = extra_mask {
            if mask.len() != n * n {
                return Err(Error::invalid(format!(
                    "extra mask has {} entries, expected {}",
                    mask.len(),
                    n * n
                )));
            }
        }
        let mut h = Matrix::zeros(n, self.config.model_dim());
        for (t, &tok) in tokens.iter().enumerate() {
            h.row_mut(t).copy_from_slice(self.embedding.row(tok));
        }
        let window = self.config.pattern.window();
        // Roped keys and values of each full-attention buffer owner, kept for
        // the sharing layer later in the stack.
        let mut shared: Vec<Option<(Matrix, Matrix)>> =
            vec![None; self.roles.iter().fold(0, |acc, r| match r {
                CacheRole::FullOwner { buffer } | CacheRole::FullShared { buffer } => {
                    acc.max(buffer + 1)
                }
                CacheRole::Sliding => acc,
            })];
        for (l, weights) in self.layers.iter().enumerate() {
            let mut q = h.matmul(&weights.wq)?;
            self.rope_rows(&mut q, positions);
            let (k, v) = match self.roles[l] {
                CacheRole::Sliding | CacheRole::FullOwner { .. } => {
                    let mut k = h.matmul(&weights.wk)?;
                    self.rope_rows(&mut k, positions);
                    let v = h.matmul(&weights.wv)?;
                    if let CacheRole::FullOwner { buffer } = self.roles[l] {
                        shared[buffer] = Some((k.clone(), v.clone()));
                    }
                    (k, v)
                }
                CacheRole::FullShared { buffer } => shared[buffer]
                    .clone()
                    .ok_or_else(|| Error::state("shared buffer read before its owner ran"))?,
            };
            let sliding = matches!(self.kinds[l], LayerKind::SlidingWindow);
            let attn = self.attend_heads(&q, &k, &v, |t, s| {
                let base = s <= t && (!sliding || t - s < window);
                base && extra_mask.is_none_or(|m| m[t * n + s])
            })?;
            let delta = attn.matmul(&weights.wo)?;
            for t in 0..n {
                let row = h.row_mut(t);
                for (x, d) in row.iter_mut().zip(delta.row(t)) {
                    *x += d;
                }
            }
        }
        Ok(h)
    }

    /// Tied readout: `hidden · E^T`.
    pub fn readout(&self, hidden: &Matrix) -> Result<Matrix> {
        hidden.matmul(&self.embedding.transpose())
    }

    /// Logits for every position of `tokens` under the layer stack's own
    /// masks plus an optional extra mask.
    pub fn forward_masked(
        &self,
        tokens: &[usize],
        positions: &[usize],
        extra_mask: Option<&[bool]>,
    ) -> Result<Matrix> {
        let h = self.hidden_states(tokens, positions, extra_mask)?;
        self.readout(&h)
    }

    /// Logits for `tokens` at positions `0..len` with no extra masking.
    pub fn forward_full(&self, tokens: &[usize]) -> Result<Matrix> {
        let positions: Vec<usize> = (0..tokens.len()).collect();
        self.forward_masked(tokens, &positions, None)
    }
}

fn attend_rows(
    q: &[f64],
    keys: &[Vec<f64>],
    values: &[Vec<f64>],
    n_heads: usize,
    head_dim: usize,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n_heads * head_dim];
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut scores = Vec::with_capacity(keys.len());
    for head in 0..n_heads {
        let cols = head * head_dim..(head + 1) * head_dim;
        scores.clear();
        for key in keys {
            let dot: f64 = q[cols.clone()].iter().zip(&key[cols.clone()]).map(|(a, b)| a * b).sum();
            scores.push(dot * scale);
        }
        let weights = crate::numkit::softmax(&scores)?;
        for (w, value) in weights.iter().zip(values) {
            for (o, x) in out[cols.clone()].iter_mut().zip(&value[cols.clone()]) {
                *o += w * x;
            }
        }
    }
    Ok(out)
}

/// Feeds one token through the model using `cache` for attention state and
/// returns the next-token logits.
///
/// The token is placed at position `cache.tokens_seen()`. Sliding layers see
/// at most their window of cached rows, full buffer owners push before they
/// read, and sharing layers attend with their own queries over the owner's
/// rows from this same step.
pub fn decode_step(model: &ToyTransformer, cache: &mut KvCache, token: usize) -> Result<Vec<f64>> {
    model.check_tokens(&[token])?;
    let dim = model.config.model_dim();
    if cache.n_layers() != model.config.n_layers || cache.dim() != dim {
        return Err(Error::invalid(format!(
            "cache shaped for {} layers x {} dims, model needs {} x {}",
            cache.n_layers(),
            cache.dim(),
            model.config.n_layers,
            dim
        )));
    }
    if cache.window() != model.config.pattern.window() {
        return Err(Error::invalid("cache window does not match the model's layer pattern"));
    }
    let pos = cache.tokens_seen();
    let hd = model.config.head_dim;
    let mut h = model.embedding.row(token).to_vec();
    cache.begin_step();
    for (l, weights) in model.layers.iter().enumerate() {
        let mut q = weights.wq.vec_matmul(&h)?;
        for head in 0..model.config.n_heads {
            rope_rotate_row(&mut q[head * hd..(head + 1) * hd], pos, &model.rope);
        }
        if matches!(model.roles[l], CacheRole::Sliding | CacheRole::FullOwner { .. }) {
            let mut k = weights.wk.vec_matmul(&h)?;
            for head in 0..model.config.n_heads {
                rope_rotate_row(&mut k[head * hd..(head + 1) * hd], pos, &model.rope);
            }
            let v = weights.wv.vec_matmul(&h)?;
            cache.push(l, k, v);
        }
        let (keys, values) = cache.visible_rows(l);
        let attn = attend_rows(&q, &keys, &values, model.config.n_heads, hd)?;
        let delta = weights.wo.vec_matmul(&attn)?;
        for (x, d) in h.iter_mut().zip(&delta) {
            *x += d;
        }
    }
    cache.advance();
    model.embedding.rows_dot(&h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model(spec: &str, window: usize, share: bool, n_layers: usize) -> ToyTransformer {
        let config = ModelConfig {
            vocab_size: 17,
            n_heads: 2,
            head_dim: 4,
            n_layers,
            pattern: LayerPattern::parse(spec, window, share).unwrap(),
            rope_base: 10000.0,
        };
        ToyTransformer::new(config, &mut Rng::new(11)).unwrap()
    }

    fn sample_tokens(n: usize, vocab: usize, seed: u64) -> Vec<usize> {
        let mut rng = Rng::new(seed);
        (0..n).map(|_| rng.below(vocab)).collect()
    }

    #[test]
    fn decode_matches_full_forward() {
        let model = small_model("1:1", 3, true, 4);
        let tokens = sample_tokens(12, 17, 5);
        let full = model.forward_full(&tokens).unwrap();
        let mut cache = model.new_cache().unwrap();
        for (t, &tok) in tokens.iter().enumerate() {
            let logits = decode_step(&model, &mut cache, tok).unwrap();
            for (j, &l) in logits.iter().enumerate() {
                assert!(
                    (l - full.get(t, j)).abs() < 1e-9,
                    "position {t} logit {j}: {l} vs {}",
                    full.get(t, j)
                );
            }
        }
        assert_eq!(cache.tokens_seen(), 12);
    }

    #[test]
    fn sharing_layer_reads_grow_with_context_and_sliding_reads_clamp() {
        let model = small_model("1:1", 3, true, 4);
        // roles: [Sliding, FullOwner(0), Sliding, FullShared(0)]
        assert!(matches!(model.roles()[3], CacheRole::FullShared { buffer: 0 }));
        let mut cache = model.new_cache().unwrap();
        let tokens = sample_tokens(7, 17, 9);
        for (t, &tok) in tokens.iter().enumerate() {
            decode_step(&model, &mut cache, tok).unwrap();
            assert_eq!(cache.reads_last_step(1), t + 1);
            assert_eq!(cache.reads_last_step(3), t + 1);
            assert_eq!(cache.reads_last_step(0), (t + 1).min(3));
            assert_eq!(cache.reads_last_step(2), (t + 1).min(3));
        }
    }

    #[test]
    fn extra_mask_restricts_attention_to_self() {
        let model = small_model("all-full", 4, false, 2);
        let tokens = sample_tokens(5, 17, 3);
        let n = tokens.len();
        let mut eye = vec![false; n * n];
        for t in 0..n {
            eye[t * n + t] = true;
        }
        let positions: Vec<usize> = (0..n).collect();
        let masked = model.forward_masked(&tokens, &positions, Some(&eye)).unwrap();
        // Each token now behaves as a length-1 sequence at its own position;
        // position 0 of the full run is the same computation.
        let solo = model.forward_full(&tokens[..1]).unwrap();
        for j in 0..17 {
            assert!((masked.get(0, j) - solo.get(0, j)).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let a = small_model("3:1", 4, true, 8);
        let b = small_model("3:1", 4, true, 8);
        let tokens = sample_tokens(9, 17, 21);
        let la = a.forward_full(&tokens).unwrap();
        let lb = b.forward_full(&tokens).unwrap();
        assert_eq!(la.as_slice(), lb.as_slice());
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = small_model("all-full", 4, false, 2);
        assert!(model.forward_full(&[]).is_err());
        assert!(model.forward_full(&[99]).is_err());
        assert!(model.forward_masked(&[1, 2], &[0], None).is_err());
        assert!(model.forward_masked(&[1, 2], &[0, 1], Some(&[true; 3])).is_err());
        let other = small_model("all-full", 4, false, 3);
        let mut cache = other.new_cache().unwrap();
        assert!(decode_step(&model, &mut cache, 1).is_err());
    }
}
