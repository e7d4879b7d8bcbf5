//! Verification tasks: a precondition on the input space (a union of
//! polytopes) and a postcondition on the outputs (a conjunction of closed
//! linear rows), plus builders for the benchmark properties.
//!
//! Postcondition rows may also reference the inputs, which is what the
//! multiplication bounds need: each row reads
//! `input_coeffs . x + output_coeffs . y + constant >= 0`.

use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use serde_json::{json, Value};

use crate::facet::{system_from_json, system_to_json};
use crate::lp::ConstraintSystem;
use crate::rat::{self, frac, int, Rat};
use crate::{Error, Result};

/// One closed postcondition row over inputs and outputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputConstraint {
    pub input_coeffs: Vec<Rat>,
    pub output_coeffs: Vec<Rat>,
    pub constant: Rat,
}

impl OutputConstraint {
    /// `y_j >= bound` rows and friends: a pure-output row.
    pub fn on_outputs(output_coeffs: Vec<Rat>, constant: Rat) -> Self {
        OutputConstraint {
            input_coeffs: Vec::new(),
            output_coeffs,
            constant,
        }
    }

    pub fn eval(&self, x: &[Rat], y: &[Rat]) -> Rat {
        let mut acc = self.constant.clone();
        for (c, v) in self.input_coeffs.iter().zip(x) {
            acc += c * v;
        }
        for (c, v) in self.output_coeffs.iter().zip(y) {
            acc += c * v;
        }
        acc
    }

    pub fn satisfied_by(&self, x: &[Rat], y: &[Rat]) -> bool {
        !self.eval(x, y).is_negative()
    }
}

/// Precondition (union of polytopes) plus postcondition (conjunction).
#[derive(Debug, Clone)]
pub struct VerificationTask {
    pub name: String,
    pub preconditions: Vec<ConstraintSystem>,
    pub postconditions: Vec<OutputConstraint>,
}

impl VerificationTask {
    pub fn input_dim(&self) -> Option<usize> {
        self.preconditions.first().map(|s| s.dim())
    }

    pub fn to_json(&self) -> Value {
        json!({
            "format": "disco-prop-v1",
            "name": self.name,
            "preconditions": self.preconditions.iter().map(system_to_json).collect::<Vec<_>>(),
            "postconditions": self.postconditions.iter().map(|p| json!({
                "input_coeffs": p.input_coeffs.iter().map(rat::to_json).collect::<Vec<_>>(),
                "output_coeffs": p.output_coeffs.iter().map(rat::to_json).collect::<Vec<_>>(),
                "const": rat::to_json(&p.constant),
            })).collect::<Vec<_>>(),
        })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        if v.get("format").and_then(Value::as_str) != Some("disco-prop-v1") {
            return Err(Error::Schema("not a disco-prop-v1 document".into()));
        }
        let name = v
            .get("name")
            .and_then(Value::as_str)
            .unwrap_or("unnamed")
            .to_string();
        let mut preconditions = Vec::new();
        for pv in v
            .get("preconditions")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Schema("missing preconditions".into()))?
        {
            preconditions.push(parse_precondition(pv)?);
        }
        if preconditions.is_empty() {
            return Err(Error::Schema("a task needs at least one precondition".into()));
        }
        let mut postconditions = Vec::new();
        for pv in v
            .get("postconditions")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Schema("missing postconditions".into()))?
        {
            let rats = |key: &str| -> Result<Vec<Rat>> {
                pv.get(key)
                    .and_then(Value::as_array)
                    .map(|a| a.iter().map(rat::from_json).collect())
                    .unwrap_or_else(|| Ok(Vec::new()))
            };
            postconditions.push(OutputConstraint {
                input_coeffs: rats("input_coeffs")?,
                output_coeffs: rats("output_coeffs")?,
                constant: rat::from_json(
                    pv.get("const")
                        .ok_or_else(|| Error::Schema("postcondition missing const".into()))?,
                )?,
            });
        }
        Ok(VerificationTask {
            name,
            preconditions,
            postconditions,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_json())?)?;
        Ok(())
    }
}

/// A precondition is either a full constraint-system object or the
/// `{"box": [[lo, hi], ...]}` shorthand, optionally with extra rows.
fn parse_precondition(v: &Value) -> Result<ConstraintSystem> {
    if let Some(bx) = v.get("box").and_then(Value::as_array) {
        let intervals = bx
            .iter()
            .map(|iv| {
                let pair = iv
                    .as_array()
                    .filter(|a| a.len() == 2)
                    .ok_or_else(|| Error::Schema("box interval must be [lo, hi]".into()))?;
                Ok((rat::from_json(&pair[0])?, rat::from_json(&pair[1])?))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut sys = ConstraintSystem::from_box(&intervals)?;
        if let Some(rows) = v.get("rows") {
            let extra = system_from_json(&json!({"dim": sys.dim(), "constraints": rows}))?;
            sys = sys.intersect(&extra);
        }
        return Ok(sys);
    }
    system_from_json(v)
}

/// The affine lower / upper bound on the product of `n` inputs over
/// `[1/2, 2]^n`, as a task on a scalar-output network:
/// lower: `y >= sum(x) + 1 - (5/4)n + alpha_n` with `alpha_n = 1/4` for odd
/// `n`, upper: `y <= (2/3)(2^n - 2^-n)(sum(x)/n - 1/2) + 2^-n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundSide {
    Lower,
    Upper,
}

pub fn multiplication_property(n: usize, side: BoundSide) -> VerificationTask {
    assert!(n >= 1);
    let bx: Vec<(Rat, Rat)> = (0..n).map(|_| (frac(1, 2), int(2))).collect();
    let pre = ConstraintSystem::from_box(&bx).expect("well-formed box");
    let post = match side {
        BoundSide::Lower => {
            let alpha = if n % 2 == 1 { frac(1, 4) } else { Rat::zero() };
            // y - sum(x) - (1 - 5n/4 + alpha) >= 0
            OutputConstraint {
                input_coeffs: vec![int(-1); n],
                output_coeffs: vec![int(1)],
                constant: frac(5 * n as i64, 4) - alpha - int(1),
            }
        }
        BoundSide::Upper => {
            // chord of t^n over [1/2, 2] applied to the average
            let pow = Rat::from_integer(BigInt::from(1) << n); // 2^n
            let inv = pow.recip(); // 2^-n
            let chord = frac(2, 3) * (&pow - &inv);
            let per_input = &chord / int(n as i64);
            // chord*(sum/n - 1/2) + 2^-n - y >= 0
            OutputConstraint {
                input_coeffs: vec![per_input; n],
                output_coeffs: vec![int(-1)],
                constant: inv - chord / int(2),
            }
        }
    };
    VerificationTask {
        name: format!(
            "multiplication-{}-{}",
            n,
            match side {
                BoundSide::Lower => "lower",
                BoundSide::Upper => "upper",
            }
        ),
        preconditions: vec![pre],
        postconditions: vec![post],
    }
}

/// Row indices of the lower half of a `side x side` image: rows strictly
/// below the middle row (the middle row of an odd side is excluded).
pub fn lower_half_rows(side: usize) -> std::ops::Range<usize> {
    (side + 1) / 2..side
}

/// Pixel indices (row-major) of the lower half.
pub fn lower_half_pixels(side: usize) -> Vec<usize> {
    lower_half_rows(side)
        .flat_map(|r| (0..side).map(move |c| r * side + c))
        .collect()
}

/// The two obstacle-detection properties over `side x side` binary-ish
/// images with pixel values in `[0, 1]`:
/// 1. any lower-half pixel at least `hi_threshold` forces output >= 0
///    (one precondition polytope per pixel, a union);
/// 2. all lower-half pixels at most `lo_threshold` forces output <= 0.
pub fn perception_properties(
    side: usize,
    hi_threshold: Rat,
    lo_threshold: Rat,
) -> Vec<VerificationTask> {
    assert!(side >= 2);
    let n = side * side;
    let pixels = lower_half_pixels(side);
    let unit: Vec<(Rat, Rat)> = (0..n).map(|_| (Rat::zero(), int(1))).collect();

    let obstacle_pre = pixels
        .iter()
        .map(|&p| {
            let mut bx = unit.clone();
            bx[p].0 = hi_threshold.clone();
            ConstraintSystem::from_box(&bx).expect("well-formed box")
        })
        .collect();
    let obstacle = VerificationTask {
        name: format!("perception-{side}-obstacle"),
        preconditions: obstacle_pre,
        postconditions: vec![OutputConstraint::on_outputs(vec![int(1)], Rat::zero())],
    };

    let mut clear_bx = unit;
    for &p in &pixels {
        clear_bx[p].1 = lo_threshold.clone();
    }
    let clear = VerificationTask {
        name: format!("perception-{side}-clear"),
        preconditions: vec![ConstraintSystem::from_box(&clear_bx).expect("well-formed box")],
        postconditions: vec![OutputConstraint::on_outputs(vec![int(-1)], Rat::zero())],
    };

    vec![obstacle, clear]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multiplication_bounds_collapse_at_n1() {
        // both bounds reduce to y = x for a single input
        let lower = multiplication_property(1, BoundSide::Lower);
        let p = &lower.postconditions[0];
        assert_eq!(p.input_coeffs, vec![int(-1)]);
        assert_eq!(p.output_coeffs, vec![int(1)]);
        assert_eq!(p.constant, Rat::zero());
        let upper = multiplication_property(1, BoundSide::Upper);
        let p = &upper.postconditions[0];
        assert_eq!(p.input_coeffs, vec![int(1)]);
        assert_eq!(p.output_coeffs, vec![int(-1)]);
        assert_eq!(p.constant, Rat::zero());
    }

    #[test]
    fn lower_bound_constants() {
        // constant is -(1 - 5n/4 + alpha_n)
        let t2 = multiplication_property(2, BoundSide::Lower);
        assert_eq!(t2.postconditions[0].constant, frac(3, 2));
        let t3 = multiplication_property(3, BoundSide::Lower);
        assert_eq!(t3.postconditions[0].constant, frac(5, 2));
    }

    #[test]
    fn lower_half_conventions() {
        assert_eq!(lower_half_pixels(2), vec![2, 3]);
        // odd side: middle row excluded, rows 3 and 4 of a 5x5 image
        assert_eq!(lower_half_pixels(5).len(), 10);
        assert_eq!(lower_half_pixels(5)[0], 15);
    }

    #[test]
    fn perception_structure() {
        let props = perception_properties(2, int(1), Rat::zero());
        assert_eq!(props.len(), 2);
        assert_eq!(props[0].preconditions.len(), 2);
        assert_eq!(props[1].preconditions.len(), 1);
        // thresholds (1, 0) pin the obstacle pixel to exactly 1
        let pre = &props[0].preconditions[0];
        let pinned = vec![Rat::zero(), Rat::zero(), int(1), Rat::zero()];
        assert!(pre.satisfied_by(&pinned));
        let not_pinned = vec![Rat::zero(), Rat::zero(), frac(1, 2), Rat::zero()];
        assert!(!pre.satisfied_by(&not_pinned));
    }

    #[test]
    fn task_json_round_trip() {
        let t = multiplication_property(3, BoundSide::Upper);
        let back = VerificationTask::from_json(&t.to_json()).unwrap();
        assert_eq!(back.name, t.name);
        assert_eq!(back.postconditions, t.postconditions);
        assert_eq!(back.preconditions.len(), 1);
        assert_eq!(back.preconditions[0].len(), t.preconditions[0].len());
    }

    #[test]
    fn box_shorthand_parses() {
        let doc = serde_json::json!({
            "format": "disco-prop-v1",
            "name": "band",
            "preconditions": [{"box": [["-1", "1"]]}],
            "postconditions": [{"output_coeffs": ["1"], "const": "0"}],
        });
        let t = VerificationTask::from_json(&doc).unwrap();
        assert_eq!(t.preconditions[0].dim(), 1);
        assert_eq!(t.preconditions[0].len(), 2);
    }
}
