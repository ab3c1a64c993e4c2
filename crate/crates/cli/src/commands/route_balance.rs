//! `route-balance`: train a gate from a collapsed (all-zero) start and log
//! the loss plus argmax-fraction extremes per step.

use ylab_core::numkit::Matrix;
use ylab_core::router::{train_gate, ExpertTopology, LossCoefficients, TokenSource};

use crate::config::{Kind, KeySpec, RunConfig};
use crate::error::{CliError, CliResult};
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
        help: "global balance-loss coefficient",
    },
    KeySpec {
        name: "router.alpha_ep",
        kind: Kind::F64,
        default: "1e-4",
        help: "group balance-loss coefficient",
    },
    KeySpec {
        name: "router.alpha_pep",
        kind: Kind::F64,
        default: "1e-3",
        help: "partition balance-loss coefficient",
    },
    KeySpec { name: "train.steps", kind: Kind::Usize, default: "200", help: "training steps" },
    KeySpec { name: "train.lr", kind: Kind::F64, default: "16", help: "learning rate" },
    KeySpec {
        name: "train.tokens_per_step",
        kind: Kind::Usize,
        default: "512",
        help: "tokens sampled per step",
    },
    KeySpec {
        name: "train.embed_dim",
        kind: Kind::Usize,
        default: "16",
        help: "token embedding width",
    },
    KeySpec {
        name: "train.log_every",
        kind: Kind::Usize,
        default: "10",
        help: "emit every Nth step (the final step always appears)",
    },
];

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let topology = ExpertTopology::new(
        cfg.get_usize("router.n_groups")?,
        cfg.get_usize("router.partitions_per_group")?,
        cfg.get_usize("router.experts_per_partition")?,
        cfg.get_usize("router.top_k")?,
    )?;
    let coeffs = LossCoefficients::new(
        cfg.get_f64("router.alpha_st")?,
        cfg.get_f64("router.alpha_ep")?,
        cfg.get_f64("router.alpha_pep")?,
    )?;
    let embed_dim = cfg.get_usize("train.embed_dim")?;
    let log_every = cfg.get_usize("train.log_every")?;
    if log_every == 0 {
        return Err(CliError::usage("train.log_every must be at least 1"));
    }
    let steps = cfg.get_usize("train.steps")?;
    let mut source = TokenSource::new(
        cfg.get_u64("seed")?,
        embed_dim,
        cfg.get_usize("train.tokens_per_step")?,
    )?;
    let init = Matrix::zeros(embed_dim, topology.n_experts());
    let outcome =
        train_gate(&topology, &coeffs, &mut source, init, steps, cfg.get_f64("train.lr")?)?;

    let mut table = Table::new(&["step", "loss", "max_f", "min_f"]);
    let last = steps.saturating_sub(1);
    for record in &outcome.trajectory {
        if record.step % log_every == 0 || record.step == last {
            table.push(vec![
                Cell::Usize(record.step),
                Cell::F64(record.loss),
                Cell::F64(record.max_f),
                Cell::F64(record.min_f),
            ]);
        }
    }
    emit(&table, cfg.format()?, cfg.out_path().as_deref())
}
