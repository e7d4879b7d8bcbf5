//! Exact rational linear programming over constraint systems.
//!
//! Two entry points: `optimize` runs an exact two-phase simplex (Bland's
//! rule) over the closure of a system, and `feasible_strict` decides
//! systems containing strict inequalities by maximizing a margin variable:
//! every strict constraint `e < 0` becomes `e <= -delta`, and the system
//! is strictly feasible iff the optimal delta is positive. No epsilons,
//! no tolerances.

use num_traits::{One, Signed, Zero};

use crate::affine::{AffineForm, LinearConstraint, Relation};
use crate::rat::Rat;
use crate::{Error, Result};

/// Where a constraint came from; enumeration and verification key on this.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    /// Part of the input-space domain (bounding box or extra rows).
    Domain,
    /// The half-space fixing a ReLU neuron's state.
    Neuron { index: usize, active: bool },
    /// A property row added during verification.
    Property,
}

#[derive(Debug, Clone)]
pub struct TaggedConstraint {
    pub constraint: LinearConstraint,
    pub provenance: Provenance,
}

/// A conjunction of linear constraints over the input variables.
#[derive(Debug, Clone)]
pub struct ConstraintSystem {
    dim: usize,
    constraints: Vec<TaggedConstraint>,
}

impl ConstraintSystem {
    pub fn new(dim: usize) -> Self {
        ConstraintSystem {
            dim,
            constraints: Vec::new(),
        }
    }

    /// Box constraints `lo_i <= x_i <= hi_i`, tagged as domain.
    pub fn from_box(bx: &[(Rat, Rat)]) -> Result<Self> {
        let dim = bx.len();
        let mut sys = ConstraintSystem::new(dim);
        for (i, (lo, hi)) in bx.iter().enumerate() {
            if lo > hi {
                return Err(Error::BadBox(format!("empty interval [{lo}, {hi}]")));
            }
            let mut f = AffineForm::coordinate(dim, i);
            f.constant = -lo;
            sys.push(LinearConstraint::non_negative(f), Provenance::Domain);
            let mut g = AffineForm::coordinate(dim, i).negated();
            g.constant = hi.clone();
            sys.push(LinearConstraint::non_negative(g), Provenance::Domain);
        }
        Ok(sys)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn push(&mut self, constraint: LinearConstraint, provenance: Provenance) {
        debug_assert_eq!(constraint.form.dim(), self.dim);
        self.constraints.push(TaggedConstraint {
            constraint,
            provenance,
        });
    }

    pub fn constraints(&self) -> &[TaggedConstraint] {
        &self.constraints
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn satisfied_by(&self, x: &[Rat]) -> bool {
        self.constraints
            .iter()
            .map(|t| &t.constraint)
            .all(|c| c.satisfied_by(x))
    }

    /// True when the point satisfies the closure of every constraint.
    pub fn closure_satisfied_by(&self, x: &[Rat]) -> bool {
        self.constraints
            .iter()
            .all(|t| t.constraint.closure().satisfied_by(x))
    }

    pub fn has_strict(&self) -> bool {
        self.constraints
            .iter()
            .any(|t| t.constraint.relation == Relation::StrictlyNegative)
    }

    /// The same system with every strict relation closed.
    pub fn closure(&self) -> ConstraintSystem {
        ConstraintSystem {
            dim: self.dim,
            constraints: self
                .constraints
                .iter()
                .map(|t| TaggedConstraint {
                    constraint: t.constraint.closure(),
                    provenance: t.provenance.clone(),
                })
                .collect(),
        }
    }

    /// Concatenation of two systems over the same variables.
    pub fn intersect(&self, other: &ConstraintSystem) -> ConstraintSystem {
        debug_assert_eq!(self.dim, other.dim);
        let mut out = self.clone();
        out.constraints.extend(other.constraints.iter().cloned());
        out
    }
}

/// Outcome of an exact LP call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LpOutcome {
    /// A strict-interior witness with its margin (the optimal delta).
    Feasible { witness: Vec<Rat>, margin: Rat },
    Infeasible,
    Optimal { value: Rat, point: Vec<Rat> },
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Min,
    Max,
}

/// Minimizes or maximizes `objective` over the closure of `sys` with an
/// exact two-phase simplex. The result value and vertex are exact.
pub fn optimize(sys: &ConstraintSystem, objective: &AffineForm, direction: Direction) -> LpOutcome {
    let n = sys.dim();
    let rows = closure_rows(sys, 0);
    let mut c: Vec<Rat> = objective.coefficients.clone();
    if direction == Direction::Max {
        for v in &mut c {
            *v = -v.clone();
        }
    }
    match simplex(n, &rows, &c) {
        RawOutcome::Infeasible => LpOutcome::Infeasible,
        RawOutcome::Unbounded => LpOutcome::Unbounded,
        RawOutcome::Optimal(point) => {
            let value = objective.eval(&point);
            LpOutcome::Optimal { value, point }
        }
    }
}

/// Decides feasibility of a system that may contain strict constraints.
/// Adds a margin variable `delta in [0, 1]`, turns each `e < 0` into
/// `e + delta <= 0`, and maximizes delta; the system has a point
/// satisfying all strict constraints strictly iff the optimum is positive.
/// The optimizing point doubles as an interior witness.
pub fn feasible_strict(sys: &ConstraintSystem) -> LpOutcome {
    let n = sys.dim();
    // one extra variable: delta at index n
    let mut rows = Vec::with_capacity(sys.len() + 2);
    for t in sys.constraints() {
        let f = &t.constraint.form;
        match t.constraint.relation {
            Relation::NonNegative => {
                // a.x + c >= 0  ->  -a.x <= c
                let mut coeffs: Vec<Rat> = f.coefficients.iter().map(|v| -v).collect();
                coeffs.push(Rat::zero());
                rows.push((coeffs, f.constant.clone()));
            }
            Relation::StrictlyNegative => {
                // a.x + c + delta <= 0  ->  a.x + delta <= -c
                let mut coeffs = f.coefficients.clone();
                coeffs.push(Rat::one());
                rows.push((coeffs, -&f.constant));
            }
        }
    }
    // 0 <= delta <= 1
    let mut lo = vec![Rat::zero(); n + 1];
    lo[n] = -Rat::one();
    rows.push((lo, Rat::zero()));
    let mut hi = vec![Rat::zero(); n + 1];
    hi[n] = Rat::one();
    rows.push((hi, Rat::one()));
    // maximize delta == minimize -delta
    let mut c = vec![Rat::zero(); n + 1];
    c[n] = -Rat::one();
    match simplex(n + 1, &rows, &c) {
        RawOutcome::Infeasible => LpOutcome::Infeasible,
        RawOutcome::Unbounded => LpOutcome::Unbounded,
        RawOutcome::Optimal(point) => {
            let margin = point[n].clone();
            if margin.is_positive() {
                LpOutcome::Feasible {
                    witness: point[..n].to_vec(),
                    margin,
                }
            } else {
                LpOutcome::Infeasible
            }
        }
    }
}

/// `a.x <= b` rows for the closure of every constraint, padded with
/// `extra` zero columns.
fn closure_rows(sys: &ConstraintSystem, extra: usize) -> Vec<(Vec<Rat>, Rat)> {
    sys.constraints()
        .iter()
        .map(|t| {
            let closed = t.constraint.closure();
            let f = &closed.form;
            let mut coeffs: Vec<Rat> = f.coefficients.iter().map(|v| -v).collect();
            coeffs.extend(std::iter::repeat(Rat::zero()).take(extra));
            (coeffs, f.constant.clone())
        })
        .collect()
}

enum RawOutcome {
    Optimal(Vec<Rat>),
    Infeasible,
    Unbounded,
}

/// Exact two-phase simplex for `min c.x  s.t.  A x <= b`, `x` free.
/// Free variables are split as `x = u - v`; Bland's rule guarantees
/// termination under degeneracy.
fn simplex(n: usize, rows: &[(Vec<Rat>, Rat)], c: &[Rat]) -> RawOutcome {
    let m = rows.len();
    if m == 0 {
        // no constraints: optimal at the origin unless the objective is
        // nonzero, in which case the problem is unbounded
        if c.iter().all(Zero::is_zero) {
            return RawOutcome::Optimal(vec![Rat::zero(); n]);
        }
        return RawOutcome::Unbounded;
    }
    // columns: u(n) | v(n) | slack(m) | artificial(as needed)
    let base_cols = 2 * n + m;
    let mut a: Vec<Vec<Rat>> = Vec::with_capacity(m);
    let mut b: Vec<Rat> = Vec::with_capacity(m);
    let mut artificial_rows = Vec::new();
    for (i, (coeffs, rhs)) in rows.iter().enumerate() {
        debug_assert_eq!(coeffs.len(), n);
        let mut row = vec![Rat::zero(); base_cols];
        let negate = rhs.is_negative();
        for (j, v) in coeffs.iter().enumerate() {
            let val = if negate { -v } else { v.clone() };
            row[j] = val.clone();
            row[n + j] = -val;
        }
        row[2 * n + i] = if negate { -Rat::one() } else { Rat::one() };
        b.push(if negate { -rhs } else { rhs.clone() });
        if negate {
            artificial_rows.push(i);
        }
        a.push(row);
    }
    let art_count = artificial_rows.len();
    let total_cols = base_cols + art_count;
    let mut basis = vec![0usize; m];
    for i in 0..m {
        basis[i] = 2 * n + i; // slack
    }
    for (k, &i) in artificial_rows.iter().enumerate() {
        let col = base_cols + k;
        for row in a.iter_mut() {
            row.push(Rat::zero());
        }
        a[i][col] = Rat::one();
        basis[i] = col;
    }

    let mut tab = Tableau {
        a,
        b,
        basis,
        forbidden_from: total_cols,
    };

    if art_count > 0 {
        // phase 1: drive artificials to zero
        let mut phase1 = vec![Rat::zero(); total_cols];
        for k in 0..art_count {
            phase1[base_cols + k] = Rat::one();
        }
        let (opt, _) = tab.run(&phase1);
        if !opt {
            // phase-1 objective is bounded below by 0; unbounded impossible
            return RawOutcome::Infeasible;
        }
        let val = tab.objective_value(&phase1);
        if !val.is_zero() {
            return RawOutcome::Infeasible;
        }
        // pivot zero-level artificials out of the basis or drop their rows
        tab.evict_artificials(base_cols);
        tab.forbidden_from = base_cols;
    }

    // after phase 1 the artificial columns are gone; rows are base_cols wide
    let mut cost = vec![Rat::zero(); base_cols];
    for j in 0..n {
        cost[j] = c[j].clone();
        cost[n + j] = -&c[j];
    }
    let (opt, unbounded) = tab.run(&cost);
    if unbounded {
        return RawOutcome::Unbounded;
    }
    debug_assert!(opt);
    let mut point = vec![Rat::zero(); n];
    for (i, &bi) in tab.basis.iter().enumerate() {
        if bi < n {
            point[bi] += &tab.b[i];
        } else if bi < 2 * n {
            point[bi - n] -= &tab.b[i];
        }
    }
    RawOutcome::Optimal(point)
}

struct Tableau {
    a: Vec<Vec<Rat>>,
    b: Vec<Rat>,
    basis: Vec<usize>,
    /// Columns at or past this index may not enter the basis.
    forbidden_from: usize,
}

impl Tableau {
    /// Runs Bland-rule pivoting for `min cost.z`. Returns
    /// (reached_optimum, unbounded).
    fn run(&mut self, cost: &[Rat]) -> (bool, bool) {
        loop {
            let reduced = self.reduced_costs(cost);
            let entering = (0..self.forbidden_from)
                .find(|&j| reduced[j].is_negative() && !self.basis.contains(&j));
            let Some(e) = entering else {
                return (true, false);
            };
            let mut leave: Option<(usize, Rat)> = None;
            for i in 0..self.a.len() {
                if self.a[i][e].is_positive() {
                    let ratio = &self.b[i] / &self.a[i][e];
                    let better = match &leave {
                        None => true,
                        Some((li, lr)) => {
                            ratio < *lr || (ratio == *lr && self.basis[i] < self.basis[*li])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((l, _)) = leave else {
                return (false, true);
            };
            self.pivot(l, e);
        }
    }

    fn reduced_costs(&self, cost: &[Rat]) -> Vec<Rat> {
        let mut reduced = cost.to_vec();
        for (i, &bi) in self.basis.iter().enumerate() {
            if cost[bi].is_zero() {
                continue;
            }
            let cb = cost[bi].clone();
            for (j, r) in reduced.iter_mut().enumerate() {
                *r -= &cb * &self.a[i][j];
            }
        }
        reduced
    }

    fn objective_value(&self, cost: &[Rat]) -> Rat {
        self.basis
            .iter()
            .enumerate()
            .map(|(i, &bi)| &cost[bi] * &self.b[i])
            .sum()
    }

    fn pivot(&mut self, l: usize, e: usize) {
        let p = self.a[l][e].clone();
        for v in self.a[l].iter_mut() {
            *v /= &p;
        }
        self.b[l] /= &p;
        for i in 0..self.a.len() {
            if i == l || self.a[i][e].is_zero() {
                continue;
            }
            let f = self.a[i][e].clone();
            for j in 0..self.a[i].len() {
                let d = &f * &self.a[l][j];
                self.a[i][j] -= d;
            }
            let d = &f * &self.b[l];
            self.b[i] -= d;
        }
        self.basis[l] = e;
    }

    /// After a zero-valued phase-1 optimum, replace basic artificials with
    /// structural columns; rows with no structural coefficient are
    /// redundant and dropped.
    fn evict_artificials(&mut self, first_artificial: usize) {
        let mut i = 0;
        while i < self.a.len() {
            if self.basis[i] >= first_artificial {
                let pivot_col =
                    (0..first_artificial).find(|&j| !self.a[i][j].is_zero() && !self.basis.contains(&j));
                match pivot_col {
                    Some(j) => self.pivot(i, j),
                    None => {
                        self.a.remove(i);
                        self.b.remove(i);
                        self.basis.remove(i);
                        continue;
                    }
                }
            }
            i += 1;
        }
        // drop artificial columns entirely
        for row in self.a.iter_mut() {
            row.truncate(first_artificial);
        }
    }
}
