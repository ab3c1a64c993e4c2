//! `dispatch-sim`: train one gate per coefficient regime from the same
//! collapsed start, dispatch a held-out batch, and report load imbalance
//! at group and partition scope.

use ylab_core::dispatch::{compare_regimes, RegimeConfig};
use ylab_core::router::{ExpertTopology, LossCoefficients};

use crate::config::{Kind, KeySpec, RunConfig};
use crate::error::CliResult;
use crate::output::{emit, Cell, Table};

pub const KEYS: &[KeySpec] = &[
    KeySpec {
        name: "router.n_groups",
        kind: Kind::Usize,
        default: "2",
        help: "expert-parallel groups",
    },
    KeySpec {
        name: "router.partitions_per_group",
        kind: Kind::Usize,
        default: "2",
        help: "partitions inside each group",
    },
    KeySpec {
        name: "router.experts_per_partition",
        kind: Kind::Usize,
        default: "2",
        help: "experts inside each partition",
    },
    KeySpec {
        name: "router.top_k",
        kind: Kind::Usize,
        default: "2",
        help: "experts selected per token",
    },
    KeySpec {
        name: "router.alpha_st",
        kind: Kind::F64,
        default: "1e-6",
        help: "global coefficient for the full regime",
    },
    KeySpec {
        name: "router.alpha_ep",
        kind: Kind::F64,
        default: "1e-4",
        help: "group coefficient for the full regime",
    },
    KeySpec {
        name: "router.alpha_pep",
        kind: Kind::F64,
        default: "1e-3",
        help: "partition coefficient for the full regime",
    },
    KeySpec {
        name: "regime.steps",
        kind: Kind::Usize,
        default: "2000",
        help: "training steps per regime",
    },
    KeySpec { name: "regime.lr", kind: Kind::F64, default: "16", help: "learning rate" },
    KeySpec {
        name: "regime.tokens_per_step",
        kind: Kind::Usize,
        default: "512",
        help: "tokens sampled per training step",
    },
    KeySpec {
        name: "regime.holdout_tokens",
        kind: Kind::Usize,
        default: "4096",
        help: "held-out tokens dispatched for the imbalance report",
    },
    KeySpec {
        name: "regime.source_ranks",
        kind: Kind::Usize,
        default: "4",
        help: "source ranks the held-out tokens are spread across",
    },
    KeySpec {
        name: "regime.embed_dim",
        kind: Kind::Usize,
        default: "16",
        help: "token embedding width",
    },
];

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let topology = ExpertTopology::new(
        cfg.get_usize("router.n_groups")?,
        cfg.get_usize("router.partitions_per_group")?,
        cfg.get_usize("router.experts_per_partition")?,
        cfg.get_usize("router.top_k")?,
    )?;
    let full = LossCoefficients::new(
        cfg.get_f64("router.alpha_st")?,
        cfg.get_f64("router.alpha_ep")?,
        cfg.get_f64("router.alpha_pep")?,
    )?;
    let st_only = LossCoefficients::new(full.alpha_st, 0.0, 0.0)?;
    let variants =
        [("zero", LossCoefficients::ZERO), ("st_only", st_only), ("full", full)];

    let regime = RegimeConfig {
        seed: cfg.get_u64("seed")?,
        embed_dim: cfg.get_usize("regime.embed_dim")?,
        tokens_per_step: cfg.get_usize("regime.tokens_per_step")?,
        steps: cfg.get_usize("regime.steps")?,
        lr: cfg.get_f64("regime.lr")?,
        holdout_tokens: cfg.get_usize("regime.holdout_tokens")?,
        source_ranks: cfg.get_usize("regime.source_ranks")?,
    };
    let coeff_list: Vec<LossCoefficients> = variants.iter().map(|(_, c)| *c).collect();
    let outcomes = compare_regimes(&topology, &coeff_list, &regime)?;

    let mut table =
        Table::new(&["variant", "scope", "max_load", "mean_load", "stddev", "imbalance_ratio"]);
    for ((name, _), outcome) in variants.iter().zip(&outcomes) {
        for report in [&outcome.group, &outcome.partition] {
            table.push(vec![
                Cell::Str(name.to_string()),
                Cell::Str(report.scope.label().to_string()),
                Cell::U64(report.max_load),
                Cell::F64(report.mean_load),
                Cell::F64(report.stddev),
                Cell::F64(report.imbalance_ratio),
            ]);
        }
    }
    emit(&table, cfg.format()?, cfg.out_path().as_deref())
}
