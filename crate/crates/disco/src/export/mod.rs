//! Text encodings of (network, task) pairs for external solvers: SMT-LIB 2
//! under QF_LRA and big-M MILP in the CPLEX LP file format. These are the
//! whole-network baselines; nothing here invokes a solver.
//!
//! Symbol naming is fixed for golden-file stability: inputs `x_i`,
//! pre-activations `n_l_j`, post-activations `y_l_j`, ReLU indicators
//! `b_l_j`. Output coordinates are the head layer's `n_L_j`.

pub mod smt_eval;

use std::fmt::Write as _;

use num_traits::{Signed, Zero};

use crate::affine::{NeuronBounds, Relation};
use crate::network::Network;
use crate::property::{OutputConstraint, VerificationTask};
use crate::rat::{self, Rat};
use crate::{Error, Result};

/// Variable name of layer `l`'s j-th post-activation as seen by layer l+1.
fn post_name(net: &Network, l: usize, j: usize) -> String {
    if net.layers()[l].has_relu {
        format!("y_{l}_{j}")
    } else {
        format!("n_{l}_{j}")
    }
}

fn smt_linear(terms: &[(Rat, String)], constant: &Rat) -> String {
    let mut parts: Vec<String> = terms
        .iter()
        .filter(|(c, _)| !c.is_zero())
        .map(|(c, v)| format!("(* {} {})", rat::to_smtlib(c), v))
        .collect();
    if !constant.is_zero() || parts.is_empty() {
        parts.push(rat::to_smtlib(constant));
    }
    if parts.len() == 1 {
        parts.pop().unwrap()
    } else {
        format!("(+ {})", parts.join(" "))
    }
}

fn smt_row(row: &OutputConstraint, net: &Network) -> String {
    let last = net.layers().len() - 1;
    let mut terms: Vec<(Rat, String)> = row
        .input_coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| (c.clone(), format!("x_{i}")))
        .collect();
    terms.extend(
        row.output_coeffs
            .iter()
            .enumerate()
            .map(|(j, c)| (c.clone(), format!("n_{last}_{j}"))),
    );
    smt_linear(&terms, &row.constant)
}

/// Compiles a task with a single precondition polytope to an SMT-LIB 2
/// script. The postcondition is negated, so `sat` means the property is
/// violated and the model is a counterexample. When `bounds` is given,
/// always-active / always-inactive ReLUs collapse to pass-through / zero
/// definitions without changing the encoded function.
pub fn to_smtlib(
    net: &Network,
    task: &VerificationTask,
    bounds: Option<&NeuronBounds>,
) -> Result<String> {
    if task.preconditions.len() != 1 {
        return Err(Error::Schema(
            "SMT export takes a single precondition polytope; expand unions into one file each"
                .into(),
        ));
    }
    let pre = &task.preconditions[0];
    if pre.dim() != net.input_dim() {
        return Err(Error::Dimension {
            layer: 0,
            detail: "precondition dimension differs from the network".into(),
        });
    }
    let mut out = String::new();
    let _ = writeln!(out, "(set-logic QF_LRA)");
    for i in 0..net.input_dim() {
        let _ = writeln!(out, "(declare-const x_{i} Real)");
    }
    for (l, layer) in net.layers().iter().enumerate() {
        for (j, (row, b)) in layer.weights.iter().zip(&layer.bias).enumerate() {
            let terms: Vec<(Rat, String)> = row
                .iter()
                .enumerate()
                .map(|(k, w)| {
                    let src = if l == 0 {
                        format!("x_{k}")
                    } else {
                        post_name(net, l - 1, k)
                    };
                    (w.clone(), src)
                })
                .collect();
            let _ = writeln!(
                out,
                "(define-fun n_{l}_{j} () Real {})",
                smt_linear(&terms, b)
            );
            if layer.has_relu {
                let body = match neuron_state(bounds, l, j) {
                    NeuronState::AlwaysActive => format!("n_{l}_{j}"),
                    NeuronState::AlwaysInactive => "0".to_string(),
                    NeuronState::Split => {
                        format!("(ite (>= n_{l}_{j} 0) n_{l}_{j} 0)")
                    }
                };
                let _ = writeln!(out, "(define-fun y_{l}_{j} () Real {body})");
            }
        }
    }
    for t in pre.constraints() {
        let f = &t.constraint.form;
        let terms: Vec<(Rat, String)> = f
            .coefficients
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), format!("x_{i}")))
            .collect();
        let expr = smt_linear(&terms, &f.constant);
        let _ = match t.constraint.relation {
            Relation::NonNegative => writeln!(out, "(assert (>= {expr} 0))"),
            Relation::StrictlyNegative => writeln!(out, "(assert (< {expr} 0))"),
        };
    }
    let negated: Vec<String> = task
        .postconditions
        .iter()
        .map(|row| format!("(< {} 0)", smt_row(row, net)))
        .collect();
    let neg = match negated.len() {
        0 => "false".to_string(),
        1 => negated.into_iter().next().unwrap(),
        _ => format!("(or {})", negated.join(" ")),
    };
    let _ = writeln!(out, "(assert {neg})");
    let _ = writeln!(out, "(check-sat)");
    Ok(out)
}

enum NeuronState {
    AlwaysActive,
    AlwaysInactive,
    Split,
}

fn neuron_state(bounds: Option<&NeuronBounds>, l: usize, j: usize) -> NeuronState {
    match bounds {
        None => NeuronState::Split,
        Some(b) => {
            let (lb, ub) = &b.per_layer[l][j];
            if !lb.is_negative() {
                NeuronState::AlwaysActive
            } else if !ub.is_positive() {
                NeuronState::AlwaysInactive
            } else {
                NeuronState::Split
            }
        }
    }
}

fn lp_term(c: &Rat, var: &str, first: bool) -> String {
    let sign = if c.is_negative() {
        "- "
    } else if first {
        ""
    } else {
        "+ "
    };
    let mag = rat::to_lp_decimal(&c.abs());
    format!("{sign}{mag} {var}")
}

fn lp_linear(terms: &[(Rat, String)]) -> String {
    let mut out = String::new();
    let mut first = true;
    for (c, v) in terms {
        if c.is_zero() {
            continue;
        }
        if !first {
            out.push(' ');
        }
        out.push_str(&lp_term(c, v, first));
        first = false;
    }
    if first {
        out.push('0');
    }
    out
}

/// Compiles a task with a single precondition polytope and a single
/// postcondition row to a big-M MILP in LP file format. The objective
/// maximizes the violation margin `t = -(postcondition row)`; the property
/// holds iff the problem is infeasible or the optimum is nonpositive.
/// Each split ReLU gets a binary indicator and the four standard rows
/// `y >= 0`, `y >= n`, `y <= n - lb (1 - b)`, `y <= ub b` with `[lb, ub]`
/// from `bounds`.
pub fn to_milp_lp(
    net: &Network,
    task: &VerificationTask,
    bounds: &NeuronBounds,
) -> Result<String> {
    if task.preconditions.len() != 1 || task.postconditions.len() != 1 {
        return Err(Error::Schema(
            "LP export takes one precondition polytope and one postcondition row; \
             emit one file per pair"
                .into(),
        ));
    }
    let pre = &task.preconditions[0];
    let row = &task.postconditions[0];
    let last = net.layers().len() - 1;
    let mut body = String::new();
    let mut binaries = Vec::new();
    let mut free_vars: Vec<String> = (0..net.input_dim()).map(|i| format!("x_{i}")).collect();

    for (l, layer) in net.layers().iter().enumerate() {
        for (j, (wrow, b)) in layer.weights.iter().zip(&layer.bias).enumerate() {
            // n_l_j - sum w * prev = bias
            let mut terms = vec![(Rat::from_integer(1.into()), format!("n_{l}_{j}"))];
            for (k, w) in wrow.iter().enumerate() {
                let src = if l == 0 {
                    format!("x_{k}")
                } else {
                    post_name(net, l - 1, k)
                };
                terms.push((-w, src));
            }
            let _ = writeln!(
                body,
                " def_{l}_{j}: {} = {}",
                lp_linear(&terms),
                rat::to_lp_decimal(b)
            );
            free_vars.push(format!("n_{l}_{j}"));
            if !layer.has_relu {
                continue;
            }
            let (lb, ub) = &bounds.per_layer[l][j];
            match neuron_state(Some(bounds), l, j) {
                NeuronState::AlwaysActive => {
                    let _ = writeln!(body, " fix_act_{l}_{j}: y_{l}_{j} - n_{l}_{j} = 0");
                }
                NeuronState::AlwaysInactive => {
                    let _ = writeln!(body, " fix_inact_{l}_{j}: y_{l}_{j} = 0");
                }
                NeuronState::Split => {
                    let _ = writeln!(body, " relu_pos_{l}_{j}: y_{l}_{j} >= 0");
                    let _ = writeln!(body, " relu_ge_{l}_{j}: y_{l}_{j} - n_{l}_{j} >= 0");
                    // y <= n - lb(1-b)  <=>  y - n - lb b <= -lb
                    let terms = vec![
                        (Rat::from_integer(1.into()), format!("y_{l}_{j}")),
                        (Rat::from_integer((-1).into()), format!("n_{l}_{j}")),
                        (-lb, format!("b_{l}_{j}")),
                    ];
                    let _ = writeln!(
                        body,
                        " relu_ub_n_{l}_{j}: {} <= {}",
                        lp_linear(&terms),
                        rat::to_lp_decimal(&-lb)
                    );
                    // y <= ub b
                    let terms = vec![
                        (Rat::from_integer(1.into()), format!("y_{l}_{j}")),
                        (-ub, format!("b_{l}_{j}")),
                    ];
                    let _ = writeln!(body, " relu_ub_b_{l}_{j}: {} <= 0", lp_linear(&terms));
                    binaries.push(format!("b_{l}_{j}"));
                }
            }
        }
    }
    for (i, t) in pre.constraints().iter().enumerate() {
        let f = &t.constraint.form;
        let terms: Vec<(Rat, String)> = f
            .coefficients
            .iter()
            .enumerate()
            .map(|(k, c)| (c.clone(), format!("x_{k}")))
            .collect();
        // a.x + c >= 0  ->  a.x >= -c (strict rows are closed: LP format
        // has no strict inequalities)
        let _ = writeln!(
            body,
            " pre_{i}: {} {} {}",
            lp_linear(&terms),
            match t.constraint.relation {
                Relation::NonNegative => ">=",
                Relation::StrictlyNegative => "<=",
            },
            rat::to_lp_decimal(&match t.constraint.relation {
                Relation::NonNegative => -&f.constant,
                Relation::StrictlyNegative => -&f.constant,
            })
        );
    }
    // t <= -(row)  <=>  t + row_expr <= -const
    let mut terms = vec![(Rat::from_integer(1.into()), "t".to_string())];
    terms.extend(
        row.input_coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), format!("x_{i}"))),
    );
    terms.extend(
        row.output_coeffs
            .iter()
            .enumerate()
            .map(|(j, c)| (c.clone(), format!("n_{last}_{j}"))),
    );
    let _ = writeln!(
        body,
        " violation: {} <= {}",
        lp_linear(&terms),
        rat::to_lp_decimal(&-&row.constant)
    );
    free_vars.push("t".to_string());

    let mut out = String::new();
    let _ = writeln!(out, "\\ big-M encoding, violation-margin objective");
    let _ = writeln!(out, "Maximize");
    let _ = writeln!(out, " obj: t");
    let _ = writeln!(out, "Subject To");
    out.push_str(&body);
    let _ = writeln!(out, "Bounds");
    for v in &free_vars {
        let _ = writeln!(out, " {v} free");
    }
    if !binaries.is_empty() {
        let _ = writeln!(out, "Binary");
        for b in &binaries {
            let _ = writeln!(out, " {b}");
        }
    }
    let _ = writeln!(out, "End");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::interval_bounds;
    use crate::fixtures::{identity_network, random_network, sample_in_box, toy_network};
    use crate::lp::ConstraintSystem;
    use crate::property::VerificationTask;
    use crate::rat::{frac, int};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn task_output_nonneg(_dim: usize, bx: &[(Rat, Rat)]) -> VerificationTask {
        VerificationTask {
            name: "nonneg".into(),
            preconditions: vec![ConstraintSystem::from_box(bx).unwrap()],
            postconditions: vec![OutputConstraint::on_outputs(vec![int(1)], int(0))],
        }
    }

    #[test]
    fn smtlib_shape() {
        let net = identity_network();
        let bx = vec![(int(-1), int(1))];
        let text = to_smtlib(&net, &task_output_nonneg(1, &bx), None).unwrap();
        assert!(text.starts_with("(set-logic QF_LRA)\n"));
        assert!(text.contains("(declare-const x_0 Real)"));
        assert!(text.contains("(define-fun y_0_0 () Real (ite (>= n_0_0 0) n_0_0 0))"));
        assert!(text.trim_end().ends_with("(check-sat)"));
        // balanced parentheses
        let depth = text.chars().fold(0i64, |d, c| match c {
            '(' => d + 1,
            ')' => d - 1,
            _ => d,
        });
        assert_eq!(depth, 0);
    }

    #[test]
    fn smtlib_rejects_union_preconditions() {
        let net = identity_network();
        let bx = vec![(int(-1), int(1))];
        let mut task = task_output_nonneg(1, &bx);
        task.preconditions.push(task.preconditions[0].clone());
        assert!(to_smtlib(&net, &task, None).is_err());
    }

    #[test]
    fn substitution_reproduces_forward() {
        let net = random_network(8, 2, &[3, 2]);
        let bx = vec![(int(-2), int(2)), (int(-2), int(2))];
        let task = task_output_nonneg(2, &bx);
        let text = to_smtlib(&net, &task, None).unwrap();
        let script = smt_eval::parse_script(&text).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let x = sample_in_box(&mut rng, &bx);
            let (y, _) = net.forward(&x).unwrap();
            let got = smt_eval::eval_outputs(&script, &x, &["n_2_0".into()]).unwrap();
            assert_eq!(got, y);
        }
    }

    #[test]
    fn simplifications_preserve_the_function() {
        let net = random_network(13, 2, &[4, 3]);
        let bx = vec![(frac(-3, 2), frac(3, 2)), (int(-1), int(2))];
        let task = task_output_nonneg(2, &bx);
        let bounds = interval_bounds(&net, &bx).unwrap();
        let plain = smt_eval::parse_script(&to_smtlib(&net, &task, None).unwrap()).unwrap();
        let simplified =
            smt_eval::parse_script(&to_smtlib(&net, &task, Some(&bounds)).unwrap()).unwrap();
        let out = vec!["n_2_0".to_string()];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let x = sample_in_box(&mut rng, &bx);
            assert_eq!(
                smt_eval::eval_outputs(&plain, &x, &out).unwrap(),
                smt_eval::eval_outputs(&simplified, &x, &out).unwrap()
            );
        }
    }

    #[test]
    fn lp_big_m_rows() {
        // identity neuron over [-1, 1]: lb = -1, ub = 1
        let net = identity_network();
        let bx = vec![(int(-1), int(1))];
        let bounds = interval_bounds(&net, &bx).unwrap();
        let text = to_milp_lp(&net, &task_output_nonneg(1, &bx), &bounds).unwrap();
        assert!(text.contains(" relu_pos_0_0: y_0_0 >= 0"));
        assert!(text.contains(" relu_ge_0_0: y_0_0 - n_0_0 >= 0"));
        // y - n - lb b <= -lb with lb = -1
        assert!(text.contains(" relu_ub_n_0_0: 1 y_0_0 - 1 n_0_0 + 1 b_0_0 <= 1"));
        // y <= ub b with ub = 1
        assert!(text.contains(" relu_ub_b_0_0: 1 y_0_0 - 1 b_0_0 <= 0"));
        assert!(text.contains("Binary\n b_0_0"));
    }

    #[test]
    fn lp_always_active_fixes_indicator() {
        let net = identity_network();
        let bx = vec![(frac(1, 2), int(2))];
        let bounds = interval_bounds(&net, &bx).unwrap();
        let text = to_milp_lp(&net, &task_output_nonneg(1, &bx), &bounds).unwrap();
        assert!(text.contains(" fix_act_0_0: y_0_0 - n_0_0 = 0"));
        assert!(!text.contains("Binary"));
    }

    #[test]
    fn exports_are_deterministic() {
        let net = toy_network();
        let bx = vec![(int(-2), int(2)), (int(-2), int(2))];
        let task = task_output_nonneg(2, &bx);
        let bounds = interval_bounds(&net, &bx).unwrap();
        assert_eq!(
            to_smtlib(&net, &task, None).unwrap(),
            to_smtlib(&net, &task, None).unwrap()
        );
        assert_eq!(
            to_milp_lp(&net, &task, &bounds).unwrap(),
            to_milp_lp(&net, &task, &bounds).unwrap()
        );
    }
}
