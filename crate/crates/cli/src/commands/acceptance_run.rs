//! `acceptance`: run the full suite and print one row per criterion.
//!
//! The table (stdout or `--out`) holds only deterministic fields so reruns
//! are byte-identical; per-criterion wall-clock timings go to stderr.

use crate::acceptance::run_all;
use crate::config::{KeySpec, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{emit, Cell, Table};

/// Criteria pin their own seeds and workloads, so the suite adds no keys
/// beyond the common ones.
pub const KEYS: &[KeySpec] = &[];

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let bin = std::env::current_exe()
        .map_err(|e| CliError::run(format!("cannot locate the running binary: {e}")))?;
    let outcomes = run_all(&bin);

    let mut table = Table::new(&["criterion", "name", "pass", "detail"]);
    let mut failures = 0usize;
    for outcome in &outcomes {
        if !outcome.passed {
            failures += 1;
        }
        table.push(vec![
            Cell::Usize(outcome.index),
            Cell::Str(outcome.name.to_string()),
            Cell::Bool(outcome.passed),
            Cell::Str(outcome.detail.clone()),
        ]);
        eprintln!(
            "criterion {:2}: {} in {:.2}s — {}",
            outcome.index,
            if outcome.passed { "PASS" } else { "FAIL" },
            outcome.seconds,
            outcome.name
        );
    }
    emit(&table, cfg.format()?, cfg.out_path().as_deref())?;
    if failures > 0 {
        return Err(CliError::run(format!(
            "acceptance: {failures} of {} criteria failed",
            outcomes.len()
        )));
    }
    Ok(())
}
