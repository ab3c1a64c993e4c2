//! `dpo-step`: run DPO gradient steps over preference pairs and log the
//! per-step mean loss and margin.
//!
//! Pairs come from a line-delimited text file (`prompt | chosen | rejected`,
//! each section whitespace-separated integer token ids) or, when no file is
//! given, from a seeded synthetic generator.

use ylab_core::numkit::Rng;
use ylab_core::preference::{build_logp_cache, DpoConfig, DpoTrainer, PreferencePair, RefSource};

use crate::commands::{build_model, synthetic_pairs};
use crate::config::{Kind, KeySpec, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{emit, Cell, Table};

pub const KEYS: &[KeySpec] = &[
    KeySpec {
        name: "dpo.pairs",
        kind: Kind::Str,
        default: "",
        help: "pairs file: `prompt | chosen | rejected` token-id lines; empty draws synthetic pairs",
    },
    KeySpec {
        name: "dpo.n_pairs",
        kind: Kind::Usize,
        default: "6",
        help: "synthetic pair count (when dpo.pairs is empty)",
    },
    KeySpec { name: "dpo.beta", kind: Kind::F64, default: "0.1", help: "DPO temperature" },
    KeySpec { name: "dpo.steps", kind: Kind::Usize, default: "5", help: "gradient steps" },
    KeySpec { name: "dpo.lr", kind: Kind::F64, default: "0.05", help: "learning rate" },
    KeySpec {
        name: "dpo.reference",
        kind: Kind::Str,
        default: "cache",
        help: "reference log-prob source: cache or inline (bit-identical either way)",
    },
    KeySpec { name: "model.vocab", kind: Kind::Usize, default: "32", help: "vocabulary size" },
    KeySpec { name: "model.heads", kind: Kind::Usize, default: "2", help: "attention heads" },
    KeySpec { name: "model.head_dim", kind: Kind::Usize, default: "4", help: "head dimension" },
    KeySpec { name: "model.layers", kind: Kind::Usize, default: "4", help: "layers in the stack" },
    KeySpec { name: "model.window", kind: Kind::Usize, default: "4", help: "sliding-window size" },
    KeySpec {
        name: "model.pattern",
        kind: Kind::Str,
        default: "3:1",
        help: "layer pattern: S:F tile, all-full, or all-sliding",
    },
    KeySpec {
        name: "model.share",
        kind: Kind::Bool,
        default: "false",
        help: "cross-layer KV sharing",
    },
    KeySpec {
        name: "model.rope_base",
        kind: Kind::F64,
        default: "10000",
        help: "rotary base frequency",
    },
];

/// Parses a pairs file. `#` starts a comment; blank lines are skipped.
pub(crate) fn read_pairs_file(path: &str) -> CliResult<Vec<PreferencePair>> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| CliError::run(format!("cannot read pairs file '{path}': {e}")))?;
    let mut pairs = Vec::new();
    for (idx, raw_line) in body.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.split_once('#') {
            Some((before, _)) => before.trim(),
            None => raw_line.trim(),
        };
        if line.is_empty() {
            continue;
        }
        let sections: Vec<&str> = line.split('|').collect();
        if sections.len() != 3 {
            return Err(CliError::run(format!(
                "{path}:{line_no}: expected `prompt | chosen | rejected`, got {} sections",
                sections.len()
            )));
        }
        let mut parsed: Vec<Vec<usize>> = Vec::with_capacity(3);
        for section in &sections {
            let mut tokens = Vec::new();
            for word in section.split_whitespace() {
                let token = word.parse::<usize>().map_err(|_| {
                    CliError::run(format!(
                        "{path}:{line_no}: '{word}' is not an unsigned integer token id"
                    ))
                })?;
                tokens.push(token);
            }
            parsed.push(tokens);
        }
        let rejected = parsed.pop().expect("three sections");
        let chosen = parsed.pop().expect("three sections");
        let prompt = parsed.pop().expect("three sections");
        let pair = PreferencePair::new(pairs.len() as u64, prompt, chosen, rejected)
            .map_err(|e| CliError::run(format!("{path}:{line_no}: {e}")))?;
        pairs.push(pair);
    }
    if pairs.is_empty() {
        return Err(CliError::run(format!("pairs file '{path}' holds no pairs")));
    }
    Ok(pairs)
}

/// Builds the model and the pair set the two DPO subcommands share.
pub(crate) fn model_and_pairs(
    cfg: &RunConfig,
) -> CliResult<(ylab_core::attention::ToyTransformer, Vec<PreferencePair>)> {
    let mut rng = Rng::new(cfg.get_u64("seed")?);
    let model = build_model(cfg, &mut rng)?;
    let path = cfg.get_str("dpo.pairs");
    let pairs = if path.is_empty() {
        synthetic_pairs(model.config().vocab_size, cfg.get_usize("dpo.n_pairs")?, &mut rng)?
    } else {
        read_pairs_file(&path)?
    };
    for pair in &pairs {
        for tokens in [pair.prompt(), pair.chosen(), pair.rejected()] {
            if let Some(&t) = tokens.iter().find(|&&t| t >= model.config().vocab_size) {
                return Err(CliError::run(format!(
                    "pair {} uses token id {t}, outside the model vocabulary of {}",
                    pair.pair_id(),
                    model.config().vocab_size
                )));
            }
        }
    }
    Ok((model, pairs))
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let (model, pairs) = model_and_pairs(cfg)?;
    let config = DpoConfig::new(cfg.get_f64("dpo.beta")?)?;
    let reference = cfg.get_str("dpo.reference");
    let cache = match reference.as_str() {
        "cache" => Some(build_logp_cache(&model, &pairs)?),
        "inline" => None,
        other => {
            return Err(CliError::usage(format!(
                "invalid value for key dpo.reference: '{other}' (expected cache or inline)"
            )))
        }
    };
    let ref_source = match &cache {
        Some(c) => RefSource::Cache(c),
        None => RefSource::Inline,
    };

    let mut trainer = DpoTrainer::new(model, config);
    let records =
        trainer.run(&pairs, cfg.get_usize("dpo.steps")?, cfg.get_f64("dpo.lr")?, ref_source)?;

    let mut table = Table::new(&["step", "loss", "margin"]);
    for record in &records {
        table.push(vec![
            Cell::Usize(record.step),
            Cell::F64(record.loss),
            Cell::F64(record.margin),
        ]);
    }
    emit(&table, cfg.format()?, cfg.out_path().as_deref())
}
