//! `decode-check`: incremental decoding must reproduce the whole-sequence
//! forward pass. Runs every pattern×sharing combination over several seeds
//! and fails (exit 1) if any logit drifts past 1e-9.

use ylab_core::attention::{decode_step, LayerPattern, ModelConfig, ToyTransformer};
use ylab_core::numkit::Rng;

use crate::config::{Kind, KeySpec, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{emit, Cell, Table};

pub const KEYS: &[KeySpec] = &[
    KeySpec {
        name: "decode.tokens",
        kind: Kind::Usize,
        default: "32",
        help: "tokens decoded per run",
    },
    KeySpec {
        name: "decode.seeds",
        kind: Kind::Usize,
        default: "5",
        help: "seeds per combination (seed, seed+1, ...)",
    },
    KeySpec { name: "model.vocab", kind: Kind::Usize, default: "32", help: "vocabulary size" },
    KeySpec { name: "model.heads", kind: Kind::Usize, default: "2", help: "attention heads" },
    KeySpec { name: "model.head_dim", kind: Kind::Usize, default: "4", help: "head dimension" },
    KeySpec { name: "model.layers", kind: Kind::Usize, default: "8", help: "layers in the stack" },
    KeySpec {
        name: "model.window",
        kind: Kind::Usize,
        default: "4",
        help: "sliding-window size",
    },
    KeySpec {
        name: "model.rope_base",
        kind: Kind::F64,
        default: "10000",
        help: "rotary base frequency",
    },
];

pub const TOLERANCE: f64 = 1e-9;

/// The four pattern×sharing combinations under test.
pub const COMBOS: [(&str, bool); 4] =
    [("3:1", false), ("3:1", true), ("full", false), ("full", true)];

/// One combination×seed comparison.
pub struct DecodeRow {
    pub pattern: &'static str,
    pub share: bool,
    pub seed: u64,
    pub max_abs_diff: f64,
    pub pass: bool,
}

/// Decodes `n_tokens` incrementally and compares each step's logits with
/// the last row of a from-scratch forward pass over the same prefix.
#[allow(clippy::too_many_arguments)]
pub fn run_checks(
    base_seed: u64,
    n_seeds: usize,
    n_tokens: usize,
    vocab: usize,
    heads: usize,
    head_dim: usize,
    layers: usize,
    window: usize,
    rope_base: f64,
) -> CliResult<Vec<DecodeRow>> {
    if n_tokens == 0 || n_seeds == 0 {
        return Err(CliError::usage("decode.tokens and decode.seeds must be at least 1"));
    }
    let mut rows = Vec::with_capacity(COMBOS.len() * n_seeds);
    for (pattern_name, share) in COMBOS {
        for s in 0..n_seeds {
            let seed = base_seed + s as u64;
            let mut rng = Rng::new(seed);
            let pattern = LayerPattern::parse(pattern_name, window, share)?;
            let config = ModelConfig {
                vocab_size: vocab,
                n_heads: heads,
                head_dim,
                n_layers: layers,
                pattern,
                rope_base,
            };
            let model = ToyTransformer::new(config, &mut rng)?;
            let tokens: Vec<usize> =
                (0..n_tokens).map(|_| (rng.next_u64() % vocab as u64) as usize).collect();

            let mut cache = model.new_cache()?;
            let mut max_abs_diff = 0.0f64;
            for t in 0..n_tokens {
                let incremental = decode_step(&model, &mut cache, tokens[t])?;
                let full = model.forward_full(&tokens[..=t])?;
                let reference = full.row(t);
                for (a, b) in incremental.iter().zip(reference) {
                    max_abs_diff = max_abs_diff.max((a - b).abs());
                }
            }
            rows.push(DecodeRow {
                pattern: pattern_name,
                share,
                seed,
                max_abs_diff,
                pass: max_abs_diff <= TOLERANCE,
            });
        }
    }
    Ok(rows)
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let rows = run_checks(
        cfg.get_u64("seed")?,
        cfg.get_usize("decode.seeds")?,
        cfg.get_usize("decode.tokens")?,
        cfg.get_usize("model.vocab")?,
        cfg.get_usize("model.heads")?,
        cfg.get_usize("model.head_dim")?,
        cfg.get_usize("model.layers")?,
        cfg.get_usize("model.window")?,
        cfg.get_f64("model.rope_base")?,
    )?;

    let mut table = Table::new(&["pattern", "share", "seed", "max_abs_diff", "pass"]);
    let mut failures = 0usize;
    for row in &rows {
        if !row.pass {
            failures += 1;
        }
        table.push(vec![
            Cell::Str(row.pattern.to_string()),
            Cell::Bool(row.share),
            Cell::U64(row.seed),
            Cell::F64(row.max_abs_diff),
            Cell::Bool(row.pass),
        ]);
    }
    emit(&table, cfg.format()?, cfg.out_path().as_deref())?;
    if failures > 0 {
        return Err(CliError::run(format!(
            "decode-check: {failures} of {} runs exceeded the {TOLERANCE} tolerance",
            rows.len()
        )));
    }
    Ok(())
}
