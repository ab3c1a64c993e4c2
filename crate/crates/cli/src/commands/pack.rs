//! `pack`: pack token samples into fixed-capacity sequences and emit one
//! row per placed sample with its per-loss-token weight. A capacity
//! utilization summary goes to stderr so the CSV/JSON sink stays clean.

use std::str::FromStr;

use ylab_core::numkit::Rng;
use ylab_core::packing::{pack, reweight, PackPolicy};

use crate::commands::rand_in;
use crate::config::{Kind, KeySpec, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{emit, Cell, Table};

pub const KEYS: &[KeySpec] = &[
    KeySpec {
        name: "pack.input",
        kind: Kind::Str,
        default: "",
        help: "input file of whitespace-separated integer token lines; empty draws synthetic samples",
    },
    KeySpec {
        name: "pack.capacity",
        kind: Kind::Usize,
        default: "64",
        help: "tokens per packed sequence",
    },
    KeySpec {
        name: "pack.policy",
        kind: Kind::Str,
        default: "first_fit",
        help: "packing policy: first_fit or greedy_descending",
    },
    KeySpec {
        name: "pack.samples",
        kind: Kind::Usize,
        default: "8",
        help: "synthetic sample count (when pack.input is empty)",
    },
    KeySpec {
        name: "pack.min_len",
        kind: Kind::Usize,
        default: "2",
        help: "minimum synthetic sample length (at least 2: the first token is context only)",
    },
    KeySpec {
        name: "pack.max_len",
        kind: Kind::Usize,
        default: "24",
        help: "maximum synthetic sample length",
    },
    KeySpec {
        name: "pack.vocab",
        kind: Kind::Usize,
        default: "32",
        help: "synthetic token id range",
    },
];

fn read_samples(path: &str) -> CliResult<Vec<Vec<usize>>> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| CliError::run(format!("cannot read pack input '{path}': {e}")))?;
    let mut samples = Vec::new();
    for (idx, line) in body.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = Vec::new();
        for word in line.split_whitespace() {
            let token = word.parse::<usize>().map_err(|_| {
                CliError::run(format!(
                    "{path}:{}: '{word}' is not an unsigned integer token id",
                    idx + 1
                ))
            })?;
            tokens.push(token);
        }
        samples.push(tokens);
    }
    if samples.is_empty() {
        return Err(CliError::run(format!("pack input '{path}' holds no samples")));
    }
    Ok(samples)
}

fn synthetic_samples(cfg: &RunConfig) -> CliResult<Vec<Vec<usize>>> {
    let count = cfg.get_usize("pack.samples")?;
    let min_len = cfg.get_usize("pack.min_len")?;
    let max_len = cfg.get_usize("pack.max_len")?;
    let vocab = cfg.get_usize("pack.vocab")?;
    if min_len < 2 {
        return Err(CliError::usage("pack.min_len must be at least 2"));
    }
    if max_len < min_len {
        return Err(CliError::usage("pack.max_len must be at least pack.min_len"));
    }
    if vocab == 0 || count == 0 {
        return Err(CliError::usage("pack.vocab and pack.samples must be at least 1"));
    }
    let mut rng = Rng::new(cfg.get_u64("seed")?);
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let len = rand_in(&mut rng, min_len, max_len);
        samples.push((0..len).map(|_| (rng.next_u64() % vocab as u64) as usize).collect());
    }
    Ok(samples)
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let input = cfg.get_str("pack.input");
    let samples =
        if input.is_empty() { synthetic_samples(cfg)? } else { read_samples(&input)? };
    let policy = PackPolicy::from_str(&cfg.get_str("pack.policy"))?;
    let capacity = cfg.get_usize("pack.capacity")?;

    let batch = pack(&samples, capacity, policy)?;
    let weights = reweight(&batch, None)?;

    let mut table = Table::new(&["sequence", "sample_id", "start", "length", "weight"]);
    for (seq_idx, sequence) in batch.sequences().iter().enumerate() {
        for span in sequence.spans() {
            // Uniform over the span's loss tokens (all but the first), so
            // any loss position is representative; take the last.
            let weight = weights[seq_idx][span.start + span.length - 1];
            table.push(vec![
                Cell::Usize(seq_idx),
                Cell::Usize(span.sample_id),
                Cell::Usize(span.start),
                Cell::Usize(span.length),
                Cell::F64(weight),
            ]);
        }
    }
    emit(&table, cfg.format()?, cfg.out_path().as_deref())?;
    eprintln!(
        "packed {} samples into {} sequences of capacity {}; utilization {}%",
        batch.n_samples(),
        batch.sequences().len(),
        batch.capacity(),
        batch.utilization() * 100.0
    );
    Ok(())
}
