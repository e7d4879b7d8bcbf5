//! Facet-by-facet verification: on each facet the network is a fixed
//! affine map, so checking `x in D /\ F_i  =>  f(x) in P` is a handful of
//! exact LPs. Verifying every facet decides the global property, sound and
//! complete; per-facet calls are independent and can run on several
//! workers, optionally returning at the first violated facet.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;

use num_traits::Signed;

use crate::affine::AffineForm;
use crate::facet::{Facet, FacetSet};
use crate::lp::{optimize, ConstraintSystem, Direction, LpOutcome};
use crate::network::{ActivationPattern, Network};
use crate::property::{OutputConstraint, VerificationTask};
use crate::rat::Rat;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerdictStatus {
    Holds,
    Violated {
        input: Vec<Rat>,
        output: Vec<Rat>,
        pattern: ActivationPattern,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VerifyStats {
    pub facets_checked: u64,
    pub lp_calls: u64,
}

#[derive(Debug, Clone)]
pub struct Verdict {
    pub status: VerdictStatus,
    /// (pattern, holds) per checked facet; truncated under fail-fast.
    pub per_facet: Vec<(ActivationPattern, bool)>,
    pub stats: VerifyStats,
}

impl Verdict {
    pub fn holds(&self) -> bool {
        self.status == VerdictStatus::Holds
    }
}

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub fail_fast: bool,
    pub parallel: bool,
    pub workers: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            fail_fast: false,
            parallel: false,
            workers: 1,
        }
    }
}

/// Per-facet result with the violating vertex when one exists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FacetOutcome {
    Holds,
    Violated { input: Vec<Rat> },
}

/// Substitutes the facet's output forms into a postcondition row, giving
/// an affine function of the inputs alone.
fn compose_row(row: &OutputConstraint, outputs: &[AffineForm], dim: usize) -> AffineForm {
    let mut h = AffineForm::constant(dim, row.constant.clone());
    for (i, c) in row.input_coeffs.iter().enumerate() {
        h.coefficients[i] += c;
    }
    for (c, form) in row.output_coeffs.iter().zip(outputs) {
        h.add_scaled(form, c);
    }
    h
}

/// Checks one facet against the task: for every precondition polytope and
/// every postcondition row, minimizes the substituted row over the closure
/// of the intersection. Holds iff every minimum is nonnegative or the
/// intersection is empty.
pub fn verify_facet(
    net: &Network,
    facet: &Facet,
    task: &VerificationTask,
    stats: &mut VerifyStats,
) -> Result<FacetOutcome> {
    let dim = net.input_dim();
    if facet.system.dim() != dim {
        return Err(Error::Dimension {
            layer: 0,
            detail: "facet dimension differs from the network input dimension".into(),
        });
    }
    for pre in &task.preconditions {
        if pre.dim() != dim {
            return Err(Error::Dimension {
                layer: 0,
                detail: "precondition dimension differs from the network input dimension".into(),
            });
        }
        let region = facet.system.closure().intersect(&pre.closure());
        for row in &task.postconditions {
            let h = compose_row(row, &facet.output_forms, dim);
            stats.lp_calls += 1;
            match optimize(&region, &h, Direction::Min) {
                LpOutcome::Optimal { value, point } => {
                    if value.is_negative() {
                        return Ok(FacetOutcome::Violated { input: point });
                    }
                }
                // empty intersection: the facet holds vacuously for this
                // precondition
                LpOutcome::Infeasible => break,
                other => {
                    return Err(Error::Internal(format!(
                        "postcondition LP returned {other:?} on a bounded region"
                    )))
                }
            }
        }
    }
    stats.facets_checked += 1;
    Ok(FacetOutcome::Holds)
}

/// Verifies the task over every facet. Holds iff all facets hold; with
/// `fail_fast` the first violation returns immediately. The status is
/// schedule-independent.
pub fn verify(
    net: &Network,
    task: &VerificationTask,
    facets: &FacetSet,
    config: &VerifyConfig,
) -> Result<Verdict> {
    if facets.net_digest != net.digest() {
        return Err(Error::DigestMismatch);
    }
    let workers = config.workers.max(1);
    if !config.parallel || workers == 1 {
        let mut stats = VerifyStats::default();
        let mut per_facet = Vec::new();
        let mut violation: Option<(Vec<Rat>, ActivationPattern)> = None;
        for facet in &facets.facets {
            match verify_facet(net, facet, task, &mut stats)? {
                FacetOutcome::Holds => per_facet.push((facet.pattern.clone(), true)),
                FacetOutcome::Violated { input } => {
                    per_facet.push((facet.pattern.clone(), false));
                    stats.facets_checked += 1;
                    if violation.is_none() {
                        violation = Some((input, facet.pattern.clone()));
                    }
                    if config.fail_fast {
                        break;
                    }
                }
            }
        }
        return finish_verdict(net, violation, per_facet, stats);
    }
    parallel_verify(net, task, facets, config, workers)
}

fn parallel_verify(
    net: &Network,
    task: &VerificationTask,
    facets: &FacetSet,
    config: &VerifyConfig,
    workers: usize,
) -> Result<Verdict> {
    let next = AtomicU64::new(0);
    let stop = AtomicBool::new(false);
    let lp_calls = AtomicU64::new(0);
    let checked = AtomicU64::new(0);
    let results: Mutex<Vec<(usize, bool, Option<Vec<Rat>>)>> = Mutex::new(Vec::new());
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst) as usize;
                if i >= facets.facets.len() {
                    break;
                }
                let facet = &facets.facets[i];
                let mut stats = VerifyStats::default();
                match verify_facet(net, facet, task, &mut stats) {
                    Ok(outcome) => {
                        let violated = matches!(outcome, FacetOutcome::Violated { .. });
                        let input = match outcome {
                            FacetOutcome::Violated { input } => Some(input),
                            FacetOutcome::Holds => None,
                        };
                        lp_calls.fetch_add(stats.lp_calls, Ordering::Relaxed);
                        checked.fetch_add(1, Ordering::Relaxed);
                        results.lock().unwrap().push((i, !violated, input));
                        if violated && config.fail_fast {
                            stop.store(true, Ordering::SeqCst);
                            break;
                        }
                    }
                    Err(e) => {
                        *failure.lock().unwrap() = Some(e);
                        stop.store(true, Ordering::SeqCst);
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let mut rows = results.into_inner().unwrap();
    rows.sort_by_key(|(i, _, _)| *i);
    let mut per_facet = Vec::new();
    let mut violation = None;
    for (i, holds, input) in rows {
        per_facet.push((facets.facets[i].pattern.clone(), holds));
        if let (None, Some(x)) = (&violation, input) {
            violation = Some((x, facets.facets[i].pattern.clone()));
        }
    }
    let stats = VerifyStats {
        facets_checked: checked.load(Ordering::Relaxed),
        lp_calls: lp_calls.load(Ordering::Relaxed),
    };
    finish_verdict(net, violation, per_facet, stats)
}

fn finish_verdict(
    net: &Network,
    violation: Option<(Vec<Rat>, ActivationPattern)>,
    per_facet: Vec<(ActivationPattern, bool)>,
    stats: VerifyStats,
) -> Result<Verdict> {
    let status = match violation {
        None => VerdictStatus::Holds,
        Some((input, pattern)) => {
            let (output, _) = net.forward(&input)?;
            VerdictStatus::Violated {
                input,
                output,
                pattern,
            }
        }
    };
    Ok(Verdict {
        status,
        per_facet,
        stats,
    })
}

/// Brute-force oracle: checks every strictly feasible pattern's closed
/// region directly, without the enumeration machinery. Exponential.
pub fn verify_oracle(
    net: &Network,
    task: &VerificationTask,
    domain: &ConstraintSystem,
) -> Result<bool> {
    use crate::affine::{neuron_constraint, output_forms, propagate_affine};
    use crate::lp::{feasible_strict, Provenance};
    let m = net.relu_count();
    assert!(m <= 20, "oracle is exponential; {m} ReLUs is too many");
    for bits in 0u64..(1u64 << m) {
        let pattern: Vec<bool> = (0..m).map(|i| bits >> i & 1 == 1).collect();
        let prop = propagate_affine(net, &pattern)?;
        let mut sys = domain.clone();
        for (i, (form, &active)) in prop.preactivations.iter().zip(&pattern).enumerate() {
            sys.push(
                neuron_constraint(form, active),
                Provenance::Neuron { index: i, active },
            );
        }
        if !matches!(feasible_strict(&sys), LpOutcome::Feasible { .. }) {
            continue;
        }
        let outputs = output_forms(net, &ActivationPattern(pattern))?;
        for pre in &task.preconditions {
            let region = sys.closure().intersect(&pre.closure());
            for row in &task.postconditions {
                let h = compose_row(row, &outputs, net.input_dim());
                match optimize(&region, &h, Direction::Min) {
                    LpOutcome::Optimal { value, .. } => {
                        if value.is_negative() {
                            return Ok(false);
                        }
                    }
                    LpOutcome::Infeasible => break,
                    other => {
                        return Err(Error::Internal(format!("oracle LP returned {other:?}")))
                    }
                }
            }
        }
    }
    Ok(true)
}
