//! `dpo-cache`: build the reference log-probability cache, serialize it,
//! read it back, and verify every record round-trips bit-exactly.

use ylab_core::preference::{build_logp_cache, Branch, LogProbCache};

use crate::commands::dpo_step::model_and_pairs;
use crate::config::{Kind, KeySpec, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{emit, Cell, Table};

pub const KEYS: &[KeySpec] = &[
    KeySpec {
        name: "cache.path",
        kind: Kind::Str,
        default: "",
        help: "file the cache is written to and re-read from (required)",
    },
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

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let path = cfg.get_str("cache.path");
    if path.is_empty() {
        return Err(CliError::usage("cache.path is required for dpo-cache"));
    }
    let (model, pairs) = model_and_pairs(cfg)?;
    let cache = build_logp_cache(&model, &pairs)?;
    let path = std::path::PathBuf::from(path);
    cache.save(&path)?;
    let reloaded = LogProbCache::load(&path)?;

    let mut table = Table::new(&["pair_id", "branch", "logp", "roundtrip_ok"]);
    let mut failures = 0usize;
    for pair in &pairs {
        for (branch, name) in [(Branch::Chosen, "chosen"), (Branch::Rejected, "rejected")] {
            let written = cache.get(pair.pair_id(), branch);
            let read_back = reloaded.get(pair.pair_id(), branch);
            // Bit-exact round trip: same value, same bits.
            let ok = match (written, read_back) {
                (Some(a), Some(b)) => a.to_bits() == b.to_bits(),
                _ => false,
            };
            if !ok {
                failures += 1;
            }
            table.push(vec![
                Cell::U64(pair.pair_id()),
                Cell::Str(name.to_string()),
                Cell::F64(written.unwrap_or(f64::NAN)),
                Cell::Bool(ok),
            ]);
        }
    }
    if reloaded.len() != cache.len() {
        failures += 1;
    }
    emit(&table, cfg.format()?, cfg.out_path().as_deref())?;
    let bytes = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    eprintln!(
        "wrote {} records ({bytes} bytes) to {}; read back {} records",
        cache.len(),
        path.display(),
        reloaded.len()
    );
    if failures > 0 {
        return Err(CliError::run(format!(
            "dpo-cache: {failures} record(s) failed to round-trip bit-exactly"
        )));
    }
    Ok(())
}
