//! Affine forms over the network inputs and their propagation through the
//! layers under a (partial) activation pattern.
//!
//! For a fixed pattern every neuron's pre-activation is an affine function
//! of the input, so each ReLU state is a half-space in the input space: an
//! active neuron contributes `form >= 0`, an inactive one `form < 0`.

use num_traits::{Signed, Zero};

use crate::network::{ActivationPattern, Network};
use crate::rat::Rat;
use crate::{Error, Result};

/// `coefficients . x + constant` over the network's input variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffineForm {
    pub coefficients: Vec<Rat>,
    pub constant: Rat,
}

impl AffineForm {
    pub fn zero(dim: usize) -> Self {
        AffineForm {
            coefficients: vec![Rat::zero(); dim],
            constant: Rat::zero(),
        }
    }

    pub fn constant(dim: usize, c: Rat) -> Self {
        AffineForm {
            coefficients: vec![Rat::zero(); dim],
            constant: c,
        }
    }

    /// The coordinate form `x_i`.
    pub fn coordinate(dim: usize, i: usize) -> Self {
        let mut f = Self::zero(dim);
        f.coefficients[i] = Rat::from_integer(1.into());
        f
    }

    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    pub fn eval(&self, x: &[Rat]) -> Rat {
        let mut acc = self.constant.clone();
        for (c, v) in self.coefficients.iter().zip(x) {
            acc += c * v;
        }
        acc
    }

    pub fn add_scaled(&mut self, other: &AffineForm, k: &Rat) {
        for (a, b) in self.coefficients.iter_mut().zip(&other.coefficients) {
            *a += k * b;
        }
        self.constant += k * &other.constant;
    }

    pub fn negated(&self) -> AffineForm {
        AffineForm {
            coefficients: self.coefficients.iter().map(|c| -c).collect(),
            constant: -&self.constant,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.constant.is_zero() && self.coefficients.iter().all(Zero::is_zero)
    }
}

/// Comparison of an affine form against zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    /// `form >= 0` (the active side; the boundary belongs to it).
    NonNegative,
    /// `form < 0` (the inactive side, open).
    StrictlyNegative,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearConstraint {
    pub form: AffineForm,
    pub relation: Relation,
}

impl LinearConstraint {
    pub fn non_negative(form: AffineForm) -> Self {
        LinearConstraint {
            form,
            relation: Relation::NonNegative,
        }
    }

    pub fn strictly_negative(form: AffineForm) -> Self {
        LinearConstraint {
            form,
            relation: Relation::StrictlyNegative,
        }
    }

    pub fn satisfied_by(&self, x: &[Rat]) -> bool {
        let v = self.form.eval(x);
        match self.relation {
            Relation::NonNegative => !v.is_negative(),
            Relation::StrictlyNegative => v.is_negative(),
        }
    }

    /// The same half-space with a closed boundary.
    pub fn closure(&self) -> LinearConstraint {
        match self.relation {
            Relation::NonNegative => self.clone(),
            // e < 0 closes to -e >= 0
            Relation::StrictlyNegative => LinearConstraint::non_negative(self.form.negated()),
        }
    }
}

/// The half-space constraint induced by fixing a neuron's state.
pub fn neuron_constraint(form: &AffineForm, active: bool) -> LinearConstraint {
    if active {
        LinearConstraint::non_negative(form.clone())
    } else {
        LinearConstraint::strictly_negative(form.clone())
    }
}

/// Result of propagating affine forms under a pattern prefix.
#[derive(Debug, Clone)]
pub struct Propagation {
    /// Pre-activation forms for each decided ReLU neuron, plus the first
    /// undecided one when the prefix is partial.
    pub preactivations: Vec<AffineForm>,
    /// Output forms of the affine head; present only for complete patterns.
    pub outputs: Option<Vec<AffineForm>>,
}

/// Propagates affine forms through the network. `prefix` decides the first
/// `prefix.len()` ReLU neurons in topological order: a decided active
/// neuron passes its pre-activation through, a decided inactive neuron is
/// replaced by the zero form. Propagation stops after the pre-activation of
/// the first undecided neuron.
pub fn propagate_affine(net: &Network, prefix: &[bool]) -> Result<Propagation> {
    let total = net.relu_count();
    if prefix.len() > total {
        return Err(Error::Internal(format!(
            "pattern prefix of length {} for a network with {} ReLU neurons",
            prefix.len(),
            total
        )));
    }
    let din = net.input_dim();
    let mut post: Vec<AffineForm> = (0..din).map(|i| AffineForm::coordinate(din, i)).collect();
    let mut preacts = Vec::new();
    let mut next_relu = 0usize;
    for layer in net.layers() {
        let mut layer_pre = Vec::with_capacity(layer.out_dim());
        for (row, b) in layer.weights.iter().zip(&layer.bias) {
            let mut f = AffineForm::constant(din, b.clone());
            for (w, g) in row.iter().zip(&post) {
                if !w.is_zero() {
                    f.add_scaled(g, w);
                }
            }
            layer_pre.push(f);
        }
        if !layer.has_relu {
            post = layer_pre;
            continue;
        }
        let mut layer_post = Vec::with_capacity(layer_pre.len());
        for f in layer_pre {
            if next_relu < prefix.len() {
                let active = prefix[next_relu];
                layer_post.push(if active {
                    f.clone()
                } else {
                    AffineForm::zero(din)
                });
                preacts.push(f);
                next_relu += 1;
            } else {
                // first undecided neuron: report its form and stop
                preacts.push(f);
                return Ok(Propagation {
                    preactivations: preacts,
                    outputs: None,
                });
            }
        }
        post = layer_post;
    }
    Ok(Propagation {
        preactivations: preacts,
        outputs: Some(post),
    })
}

/// Output forms of the network restricted to a complete pattern.
pub fn output_forms(net: &Network, pattern: &ActivationPattern) -> Result<Vec<AffineForm>> {
    if pattern.len() != net.relu_count() {
        return Err(Error::Internal(format!(
            "pattern length {} != ReLU count {}",
            pattern.len(),
            net.relu_count()
        )));
    }
    let prop = propagate_affine(net, &pattern.0)?;
    prop.outputs
        .ok_or_else(|| Error::Internal("complete pattern produced no outputs".into()))
}

/// Sound pre-activation interval bounds over an input box, per layer.
#[derive(Debug, Clone)]
pub struct NeuronBounds {
    /// `per_layer[l][j]` is an enclosing `[lb, ub]` for the pre-activation
    /// of neuron `j` of layer `l`.
    pub per_layer: Vec<Vec<(Rat, Rat)>>,
}

/// Plain interval arithmetic through the layers, clamping at zero across
/// each ReLU. Loose but sound; only feeds big-M constants.
pub fn interval_bounds(net: &Network, bx: &[(Rat, Rat)]) -> Result<NeuronBounds> {
    if bx.len() != net.input_dim() {
        return Err(Error::BadBox(format!(
            "box has {} intervals, expected {}",
            bx.len(),
            net.input_dim()
        )));
    }
    for (lo, hi) in bx {
        if lo > hi {
            return Err(Error::BadBox(format!(
                "empty interval [{lo}, {hi}]"
            )));
        }
    }
    let mut cur: Vec<(Rat, Rat)> = bx.to_vec();
    let mut per_layer = Vec::new();
    for layer in net.layers() {
        let mut pre = Vec::with_capacity(layer.out_dim());
        for (row, b) in layer.weights.iter().zip(&layer.bias) {
            let mut lo = b.clone();
            let mut hi = b.clone();
            for (w, (plo, phi)) in row.iter().zip(&cur) {
                if w.is_negative() {
                    lo += w * phi;
                    hi += w * plo;
                } else {
                    lo += w * plo;
                    hi += w * phi;
                }
            }
            pre.push((lo, hi));
        }
        cur = if layer.has_relu {
            pre.iter()
                .map(|(lo, hi)| {
                    (
                        if lo.is_negative() { Rat::zero() } else { lo.clone() },
                        if hi.is_negative() { Rat::zero() } else { hi.clone() },
                    )
                })
                .collect()
        } else {
            pre.clone()
        };
        per_layer.push(pre);
    }
    Ok(NeuronBounds { per_layer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{chain_network, identity_network, random_network, sample_in_box, toy_network};
    use crate::rat::{frac, int};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn propagate_identity() {
        let net = identity_network();
        let p = propagate_affine(&net, &[]).unwrap();
        assert_eq!(p.preactivations.len(), 1);
        assert_eq!(p.preactivations[0].coefficients, vec![int(1)]);
        assert_eq!(p.preactivations[0].constant, int(0));
        assert!(p.outputs.is_none());

        let p = propagate_affine(&net, &[false]).unwrap();
        let out = &p.outputs.unwrap()[0];
        assert!(out.is_zero());
    }

    #[test]
    fn propagate_chain() {
        // two unit layers: with the first neuron active, the second
        // neuron's pre-activation is x again
        let net = chain_network(2);
        let p = propagate_affine(&net, &[true]).unwrap();
        assert_eq!(p.preactivations.len(), 2);
        assert_eq!(p.preactivations[1].coefficients, vec![int(1)]);
        assert_eq!(p.preactivations[1].constant, int(0));
    }

    #[test]
    fn neuron_constraints_match_states() {
        let f = AffineForm {
            coefficients: vec![int(1)],
            constant: int(-1),
        };
        let a = neuron_constraint(&f, true);
        assert_eq!(a.relation, Relation::NonNegative);
        assert!(a.satisfied_by(&[int(1)]));
        assert!(a.satisfied_by(&[int(2)]));
        let i = neuron_constraint(&f, false);
        assert_eq!(i.relation, Relation::StrictlyNegative);
        assert!(i.satisfied_by(&[int(0)]));
        assert!(!i.satisfied_by(&[int(1)]));
    }

    #[test]
    fn toy_origin_region_constraints() {
        // at the origin the toy net has pattern (0,0,1); the three
        // half-spaces must all contain the origin accordingly
        let net = toy_network();
        let (_, pat) = net.forward(&[int(0), int(0)]).unwrap();
        assert_eq!(pat.to_bit_string(), "001");
        let prop = propagate_affine(&net, &pat.0).unwrap();
        for (form, &active) in prop.preactivations.iter().zip(&pat.0) {
            assert!(neuron_constraint(form, active).satisfied_by(&[int(0), int(0)]));
        }
    }

    #[test]
    fn outputs_match_forward_exactly() {
        let net = random_network(7, 2, &[3, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bx = vec![(int(-2), int(2)), (int(-2), int(2))];
        for _ in 0..50 {
            let x = sample_in_box(&mut rng, &bx);
            let (y, pat) = net.forward(&x).unwrap();
            let outs = output_forms(&net, &pat).unwrap();
            let via_forms: Vec<_> = outs.iter().map(|f| f.eval(&x)).collect();
            assert_eq!(y, via_forms);
        }
    }

    #[test]
    fn interval_bounds_basics() {
        let net = identity_network();
        let b = interval_bounds(&net, &[(int(-1), int(1))]).unwrap();
        assert_eq!(b.per_layer[0][0], (int(-1), int(1)));

        // affine layer 2x + 1 over [0, 1] maps to [1, 3]
        let net = crate::network::Network::new(
            1,
            vec![crate::network::Layer {
                weights: vec![vec![int(2)]],
                bias: vec![int(1)],
                has_relu: false,
            }],
        )
        .unwrap();
        let b = interval_bounds(&net, &[(int(0), int(1))]).unwrap();
        assert_eq!(b.per_layer[0][0], (int(1), int(3)));

        assert!(interval_bounds(&net, &[(int(1), int(0))]).is_err());
        assert!(interval_bounds(&net, &[]).is_err());
    }

    #[test]
    fn interval_bounds_enclose_sampled_preactivations() {
        let net = random_network(3, 2, &[4, 3]);
        let bx = vec![(frac(-3, 2), int(2)), (int(-1), int(1))];
        let bounds = interval_bounds(&net, &bx).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let x = sample_in_box(&mut rng, &bx);
            // recompute pre-activations by full propagation of the sample
            let (_, pat) = net.forward(&x).unwrap();
            let prop = propagate_affine(&net, &pat.0).unwrap();
            let mut idx = 0;
            for (li, layer) in net.layers().iter().enumerate() {
                if !layer.has_relu {
                    continue;
                }
                for j in 0..layer.out_dim() {
                    let v = prop.preactivations[idx].eval(&x);
                    let (lo, hi) = &bounds.per_layer[li][j];
                    assert!(lo <= &v && &v <= hi, "neuron {li}/{j} escapes [{lo}, {hi}]");
                    idx += 1;
                }
            }
        }
    }
}
