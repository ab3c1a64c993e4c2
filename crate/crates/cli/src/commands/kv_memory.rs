//! `kv-memory`: cartesian sweep of KV-cache memory accounting over
//! window sizes, context lengths, layer patterns, and cross-layer sharing.
//!
//! With `--jobs N` the sweep points are evaluated on N threads; rows are
//! still emitted in sweep order, so the output is byte-identical to the
//! single-threaded run.

use ylab_core::attention::{memory_account, LayerPattern, MemoryParams};

use crate::config::{Kind, KeySpec, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{emit, Cell, Table};

pub const KEYS: &[KeySpec] = &[
    KeySpec {
        name: "window",
        kind: Kind::UsizeList,
        default: "4096",
        help: "sliding-window sizes to sweep (comma-separated)",
    },
    KeySpec {
        name: "context",
        kind: Kind::UsizeList,
        default: "65536",
        help: "context lengths to sweep (comma-separated)",
    },
    KeySpec {
        name: "pattern",
        kind: Kind::StrList,
        default: "3:1",
        help: "layer patterns to sweep: S:F tiles, all-full, or all-sliding",
    },
    KeySpec {
        name: "share",
        kind: Kind::BoolList,
        default: "false",
        help: "cross-layer KV sharing settings to sweep; bare --share means true",
    },
    KeySpec { name: "layers", kind: Kind::Usize, default: "8", help: "layers in the stack" },
    KeySpec { name: "heads", kind: Kind::Usize, default: "8", help: "attention heads" },
    KeySpec { name: "head_dim", kind: Kind::Usize, default: "128", help: "head dimension" },
    KeySpec {
        name: "bytes_per_element",
        kind: Kind::Usize,
        default: "2",
        help: "bytes charged per cached element",
    },
    KeySpec {
        name: "jobs",
        kind: Kind::Usize,
        default: "1",
        help: "worker threads for the sweep; output order is unaffected",
    },
];

struct SweepPoint {
    window: usize,
    context: usize,
    pattern: String,
    share: bool,
}

fn evaluate(point: &SweepPoint, layers: usize, base: &MemoryParams) -> CliResult<Vec<Cell>> {
    let pattern = LayerPattern::parse(&point.pattern, point.window, point.share)?;
    let params = MemoryParams { context_len: point.context, ..*base };
    let layout = memory_account(&pattern, layers, &params)?;
    Ok(vec![
        Cell::Usize(point.window),
        Cell::Usize(point.context),
        Cell::Str(point.pattern.clone()),
        Cell::Bool(point.share),
        Cell::Usize(layers),
        Cell::Usize(params.n_heads),
        Cell::Usize(params.head_dim),
        Cell::Usize(params.bytes_per_element),
        Cell::U64(layout.total_bytes),
        Cell::U64(layout.baseline_bytes),
        Cell::F64(layout.reduction * 100.0),
    ])
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let jobs = cfg.get_usize("jobs")?;
    if jobs == 0 {
        return Err(CliError::usage("jobs must be at least 1"));
    }
    let layers = cfg.get_usize("layers")?;
    let base = MemoryParams {
        context_len: 1, // replaced per sweep point
        n_heads: cfg.get_usize("heads")?,
        head_dim: cfg.get_usize("head_dim")?,
        bytes_per_element: cfg.get_usize("bytes_per_element")?,
    };

    let mut points = Vec::new();
    for &window in &cfg.get_usize_list("window")? {
        for &context in &cfg.get_usize_list("context")? {
            for pattern in &cfg.get_str_list("pattern")? {
                for &share in &cfg.get_bool_list("share")? {
                    points.push(SweepPoint { window, context, pattern: pattern.clone(), share });
                }
            }
        }
    }

    let mut rows: Vec<CliResult<Vec<Cell>>> = Vec::new();
    if jobs == 1 || points.len() <= 1 {
        for point in &points {
            rows.push(evaluate(point, layers, &base));
        }
    } else {
        // Deal points round-robin to the workers, then reassemble in sweep
        // order so the listing is independent of scheduling.
        let workers = jobs.min(points.len());
        let mut indexed: Vec<(usize, CliResult<Vec<Cell>>)> = std::thread::scope(|scope| {
            let mut handles = Vec::with_capacity(workers);
            let points = &points;
            let base = &base;
            for w in 0..workers {
                handles.push(scope.spawn(move || {
                    let mut done = Vec::new();
                    let mut i = w;
                    while i < points.len() {
                        done.push((i, evaluate(&points[i], layers, base)));
                        i += workers;
                    }
                    done
                }));
            }
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("sweep worker never panics"))
                .collect()
        });
        indexed.sort_by_key(|(i, _)| *i);
        rows = indexed.into_iter().map(|(_, row)| row).collect();
    }

    let mut table = Table::new(&[
        "window",
        "context",
        "pattern",
        "share",
        "layers",
        "heads",
        "head_dim",
        "bytes_per_element",
        "total_bytes",
        "baseline_bytes",
        "reduction_pct",
    ]);
    for row in rows {
        table.push(row?);
    }
    emit(&table, cfg.format()?, cfg.out_path().as_deref())
}
