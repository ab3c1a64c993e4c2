//! `gradcheck`: compare analytic gradients with central finite differences
//! for the three differentiable losses. Fails (exit 1) if any instance's
//! maximum relative error reaches 1e-6.

use ylab_core::numkit::{grad_check, softmax, Matrix, Rng};
use ylab_core::preference::{bt_loss, dpo_loss, DpoConfig};
use ylab_core::router::{combined_aux_loss, ExpertTopology, GateOutput, LossCoefficients};

use crate::config::{Kind, KeySpec, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{emit, Cell, Table};

pub const KEYS: &[KeySpec] = &[KeySpec {
    name: "gradcheck.instances",
    kind: Kind::Usize,
    default: "20",
    help: "seeded instances per loss family",
}];

pub const TOLERANCE: f64 = 1e-6;
const FD_STEP: f64 = 1e-5;

/// One family×instance comparison.
pub struct CheckRow {
    pub family: &'static str,
    pub instance: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

fn gate_from_logits(logits: &[f64], tokens: usize, n: usize, top_k: usize) -> GateOutput {
    let mut probs = Matrix::zeros(tokens, n);
    for t in 0..tokens {
        let p = softmax(&logits[t * n..(t + 1) * n]).expect("finite logits");
        probs.row_mut(t).copy_from_slice(&p);
    }
    GateOutput::from_probs(probs, top_k).expect("softmax rows are a valid gate")
}

/// Combined balance loss over gate logits. The argmax assignments are step
/// functions of the logits, locally constant at the generic points the
/// seeded sampler produces, so central differences of the full loss probe
/// the same surrogate the analytic gradient differentiates.
fn aux_instance(rng: &mut Rng) -> CliResult<f64> {
    let topology = ExpertTopology::new(2, 2, 2, 2)?;
    let coeffs = LossCoefficients::default();
    let tokens = 12;
    let n = topology.n_experts();
    let logits: Vec<f64> = (0..tokens * n).map(|_| rng.uniform(-2.0, 2.0)).collect();

    let gate = gate_from_logits(&logits, tokens, n, topology.top_k());
    let analytic = combined_aux_loss(&gate, &topology, &coeffs)?;
    let objective = |z: &[f64]| {
        let gate = gate_from_logits(z, tokens, n, topology.top_k());
        combined_aux_loss(&gate, &topology, &coeffs).expect("valid gate").loss
    };
    Ok(grad_check(objective, analytic.logit_grad.as_slice(), &logits, FD_STEP)?)
}

/// DPO loss over the two policy log-probabilities (references are frozen).
fn dpo_instance(rng: &mut Rng) -> CliResult<f64> {
    let policy_chosen = rng.uniform(-6.0, -1.0);
    let policy_rejected = rng.uniform(-6.0, -1.0);
    let ref_chosen = rng.uniform(-6.0, -1.0);
    let ref_rejected = rng.uniform(-6.0, -1.0);
    let config = DpoConfig::new(rng.uniform(0.05, 0.5))?;

    let out = dpo_loss(policy_chosen, policy_rejected, ref_chosen, ref_rejected, &config)?;
    let analytic = [out.grad_policy_chosen, out.grad_policy_rejected];
    let point = [policy_chosen, policy_rejected];
    let objective = |x: &[f64]| {
        dpo_loss(x[0], x[1], ref_chosen, ref_rejected, &config).expect("finite inputs").loss
    };
    Ok(grad_check(objective, &analytic, &point, FD_STEP)?)
}

/// Bradley-Terry loss over the two scores.
fn bt_instance(rng: &mut Rng) -> CliResult<f64> {
    let chosen = rng.uniform(-3.0, 3.0);
    let rejected = rng.uniform(-3.0, 3.0);
    let out = bt_loss(chosen, rejected)?;
    let analytic = [out.grad_chosen, out.grad_rejected];
    let point = [chosen, rejected];
    let objective = |x: &[f64]| bt_loss(x[0], x[1]).expect("finite inputs").loss;
    Ok(grad_check(objective, &analytic, &point, FD_STEP)?)
}

/// Runs `instances` checks per family under forks of `seed`.
pub fn run_checks(seed: u64, instances: usize) -> CliResult<Vec<CheckRow>> {
    if instances == 0 {
        return Err(CliError::usage("gradcheck.instances must be at least 1"));
    }
    let base = Rng::new(seed);
    type InstanceFn = fn(&mut Rng) -> CliResult<f64>;
    let families: [(&'static str, u64, InstanceFn); 3] = [
        ("combined_aux", 0xA000, aux_instance),
        ("dpo", 0xD000, dpo_instance),
        ("bt", 0xB000, bt_instance),
    ];
    let mut rows = Vec::with_capacity(3 * instances);
    for (family, label, body) in families {
        for instance in 0..instances {
            let mut rng = base.fork(label + instance as u64);
            let max_rel_err = body(&mut rng)?;
            rows.push(CheckRow { family, instance, max_rel_err, pass: max_rel_err < TOLERANCE });
        }
    }
    Ok(rows)
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let rows = run_checks(cfg.get_u64("seed")?, cfg.get_usize("gradcheck.instances")?)?;

    let mut table = Table::new(&["family", "instance", "max_rel_err", "pass"]);
    let mut failures = 0usize;
    for row in &rows {
        if !row.pass {
            failures += 1;
        }
        table.push(vec![
            Cell::Str(row.family.to_string()),
            Cell::Usize(row.instance),
            Cell::F64(row.max_rel_err),
            Cell::Bool(row.pass),
        ]);
    }
    emit(&table, cfg.format()?, cfg.out_path().as_deref())?;
    if failures > 0 {
        return Err(CliError::run(format!(
            "gradcheck: {failures} of {} instances reached the {TOLERANCE} relative-error bound",
            rows.len()
        )));
    }
    Ok(())
}
