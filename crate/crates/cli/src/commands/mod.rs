//! Subcommand registry and dispatch.

use ylab_core::attention::{LayerPattern, ModelConfig, ToyTransformer};
use ylab_core::numkit::Rng;
use ylab_core::preference::PreferencePair;

use crate::config::{RunConfig, SubcommandSpec};
use crate::error::CliResult;

pub mod acceptance_run;
pub mod decode_check;
pub mod dispatch_sim;
pub mod dpo_cache;
pub mod dpo_step;
pub mod gradcheck;
pub mod kv_memory;
pub mod pack;
pub mod route_balance;

/// Every subcommand, in help-listing order.
pub fn registry() -> Vec<SubcommandSpec> {
    vec![
        SubcommandSpec {
            name: "route-balance",
            about: "train a gate from a collapsed start and log balance statistics",
            keys: route_balance::KEYS,
        },
        SubcommandSpec {
            name: "dispatch-sim",
            about: "compare dispatch imbalance across balance-loss coefficient regimes",
            keys: dispatch_sim::KEYS,
        },
        SubcommandSpec {
            name: "kv-memory",
            about: "sweep KV-cache memory accounting over patterns, windows, and sharing",
            keys: kv_memory::KEYS,
        },
        SubcommandSpec {
            name: "decode-check",
            about: "verify incremental decoding against the whole-sequence forward pass",
            keys: decode_check::KEYS,
        },
        SubcommandSpec {
            name: "pack",
            about: "pack samples into fixed-capacity sequences and emit spans with loss weights",
            keys: pack::KEYS,
        },
        SubcommandSpec {
            name: "dpo-step",
            about: "run DPO training steps over preference pairs and log loss/margin",
            keys: dpo_step::KEYS,
        },
        SubcommandSpec {
            name: "dpo-cache",
            about: "build, serialize, and verify the reference log-probability cache",
            keys: dpo_cache::KEYS,
        },
        SubcommandSpec {
            name: "gradcheck",
            about: "check analytic gradients against central finite differences",
            keys: gradcheck::KEYS,
        },
        SubcommandSpec {
            name: "acceptance",
            about: "run the full acceptance suite and print a PASS/FAIL table",
            keys: acceptance_run::KEYS,
        },
    ]
}

/// Routes a parsed configuration to its command.
pub fn dispatch(cfg: &RunConfig) -> CliResult<()> {
    match cfg.subcommand {
        "route-balance" => route_balance::run(cfg),
        "dispatch-sim" => dispatch_sim::run(cfg),
        "kv-memory" => kv_memory::run(cfg),
        "decode-check" => decode_check::run(cfg),
        "pack" => pack::run(cfg),
        "dpo-step" => dpo_step::run(cfg),
        "dpo-cache" => dpo_cache::run(cfg),
        "gradcheck" => gradcheck::run(cfg),
        "acceptance" => acceptance_run::run(cfg),
        other => unreachable!("registry accepted unknown subcommand {other}"),
    }
}

/// Draws an integer uniformly from `lo..=hi` (inclusive) by modulo; fine
/// for laboratory workloads where a slight bias is irrelevant.
pub(crate) fn rand_in(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    debug_assert!(lo <= hi);
    lo + (rng.next_u64() % (hi - lo + 1) as u64) as usize
}

/// Builds the small transformer the model-backed subcommands share, from
/// `model.*` keys. The RNG both initializes the weights and stays usable
/// for whatever token material the caller draws next.
pub(crate) fn build_model(cfg: &RunConfig, rng: &mut Rng) -> CliResult<ToyTransformer> {
    let pattern = LayerPattern::parse(
        &cfg.get_str("model.pattern"),
        cfg.get_usize("model.window")?,
        cfg.get_bool("model.share")?,
    )?;
    let config = ModelConfig {
        vocab_size: cfg.get_usize("model.vocab")?,
        n_heads: cfg.get_usize("model.heads")?,
        head_dim: cfg.get_usize("model.head_dim")?,
        n_layers: cfg.get_usize("model.layers")?,
        pattern,
        rope_base: cfg.get_f64("model.rope_base")?,
    };
    Ok(ToyTransformer::new(config, rng)?)
}

/// Deterministic synthetic preference pairs: short random prompts with two
/// distinct random responses each.
pub(crate) fn synthetic_pairs(
    vocab: usize,
    n_pairs: usize,
    rng: &mut Rng,
) -> CliResult<Vec<PreferencePair>> {
    let mut pairs = Vec::with_capacity(n_pairs);
    for id in 0..n_pairs {
        let draw = |rng: &mut Rng, len: usize| -> Vec<usize> {
            (0..len).map(|_| (rng.next_u64() % vocab as u64) as usize).collect()
        };
        let prompt_len = rand_in(rng, 2, 5);
        let chosen_len = rand_in(rng, 2, 4);
        let rejected_len = rand_in(rng, 2, 4);
        let prompt = draw(rng, prompt_len);
        let chosen = draw(rng, chosen_len);
        let rejected = draw(rng, rejected_len);
        pairs.push(PreferencePair::new(id as u64, prompt, chosen, rejected)?);
    }
    Ok(pairs)
}
