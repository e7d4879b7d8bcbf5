//! Depth-first enumeration of all feasible facets of a bounded domain.
//!
//! Neurons are processed in topological order. At each ReLU the branch
//! containing the current stack's witness point is feasible for free; only
//! the opposite branch costs an exact LP call. When both branches are
//! feasible the stack is copied and the copy goes to the work queue, so
//! enumeration parallelizes over independent subtrees. The resulting
//! pattern set is exactly `{ pattern(x) : x in domain }` and does not
//! depend on worker count or schedule.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use num_traits::Signed;
use serde_json::{json, Value};

use crate::affine::{neuron_constraint, output_forms, propagate_affine, AffineForm, LinearConstraint, Relation};
use crate::lp::{feasible_strict, ConstraintSystem, LpOutcome, Provenance};
use crate::network::{ActivationPattern, Network};
use crate::rat::{self, Rat};
use crate::{Error, Result};

/// One linear region: an activation pattern, its defining polytope
/// (domain plus one half-space per ReLU neuron) and the affine map the
/// network computes on it.
#[derive(Debug, Clone)]
pub struct Facet {
    pub pattern: ActivationPattern,
    pub system: ConstraintSystem,
    pub output_forms: Vec<AffineForm>,
}

/// All facets of a network over a domain, tied to the network by digest.
#[derive(Debug, Clone)]
pub struct FacetSet {
    pub facets: Vec<Facet>,
    pub domain: ConstraintSystem,
    pub net_digest: String,
}

#[derive(Debug, Clone)]
pub struct EnumConfig {
    pub parallel: bool,
    pub workers: usize,
    /// Count leaves without materializing constraint systems or output forms.
    pub count_only: bool,
}

impl Default for EnumConfig {
    fn default() -> Self {
        EnumConfig {
            parallel: false,
            workers: 1,
            count_only: false,
        }
    }
}

struct Task {
    prefix: Vec<bool>,
    system: ConstraintSystem,
    witness: Vec<Rat>,
}

struct Sink {
    count: AtomicU64,
    facets: Option<Mutex<Vec<Facet>>>,
}

impl Sink {
    fn emit(&self, net: &Network, task: Task) -> Result<()> {
        self.count.fetch_add(1, Ordering::Relaxed);
        if let Some(facets) = &self.facets {
            let pattern = ActivationPattern(task.prefix);
            let outputs = output_forms(net, &pattern)?;
            facets.lock().unwrap().push(Facet {
                pattern,
                system: task.system,
                output_forms: outputs,
            });
        }
        Ok(())
    }
}

/// Runs one task down to a leaf, pushing forked siblings through `fork`.
fn descend(
    net: &Network,
    total: usize,
    mut task: Task,
    sink: &Sink,
    fork: &mut dyn FnMut(Task),
) -> Result<()> {
    while task.prefix.len() < total {
        let prop = propagate_affine(net, &task.prefix)?;
        let form = prop
            .preactivations
            .last()
            .ok_or_else(|| Error::Internal("propagation produced no next neuron".into()))?;
        let neuron_index = task.prefix.len();
        let val = form.eval(&task.witness);
        // the branch containing the witness is feasible without an LP call
        let preferred_active = !val.is_negative();
        let mut other = task.system.clone();
        other.push(
            neuron_constraint(form, !preferred_active),
            Provenance::Neuron {
                index: neuron_index,
                active: !preferred_active,
            },
        );
        match feasible_strict(&other) {
            LpOutcome::Feasible { witness, .. } => {
                let mut prefix = task.prefix.clone();
                prefix.push(!preferred_active);
                fork(Task {
                    prefix,
                    system: other,
                    witness,
                });
            }
            LpOutcome::Infeasible => {}
            other_outcome => {
                return Err(Error::Internal(format!(
                    "branch LP returned {other_outcome:?}; the domain box should make every stack bounded"
                )))
            }
        }
        task.system.push(
            neuron_constraint(form, preferred_active),
            Provenance::Neuron {
                index: neuron_index,
                active: preferred_active,
            },
        );
        task.prefix.push(preferred_active);
        debug_assert!(task.system.satisfied_by(&task.witness));
    }
    sink.emit(net, task)
}

fn run_enumeration(
    net: &Network,
    domain: &ConstraintSystem,
    cfg: &EnumConfig,
) -> Result<(u64, Vec<Facet>)> {
    if domain.dim() != net.input_dim() {
        return Err(Error::Dimension {
            layer: 0,
            detail: format!(
                "domain dimension {} != network input dimension {}",
                domain.dim(),
                net.input_dim()
            ),
        });
    }
    let witness = match feasible_strict(domain) {
        LpOutcome::Feasible { witness, .. } => witness,
        LpOutcome::Infeasible => return Err(Error::EmptyDomain),
        other => {
            return Err(Error::Internal(format!(
                "domain feasibility returned {other:?}"
            )))
        }
    };
    let total = net.relu_count();
    let sink = Sink {
        count: AtomicU64::new(0),
        facets: if cfg.count_only {
            None
        } else {
            Some(Mutex::new(Vec::new()))
        },
    };
    let root = Task {
        prefix: Vec::new(),
        system: domain.clone(),
        witness,
    };

    let workers = cfg.workers.max(1);
    if !cfg.parallel || workers == 1 {
        // deterministic single-threaded DFS
        let mut stack = vec![root];
        while let Some(task) = stack.pop() {
            descend(net, total, task, &sink, &mut |t| stack.push(t))?;
        }
    } else {
        parallel_enumeration(net, total, root, &sink, workers)?;
    }

    let mut facets = match sink.facets {
        Some(m) => m.into_inner().unwrap(),
        None => Vec::new(),
    };
    facets.sort_by(|a, b| a.pattern.cmp(&b.pattern));
    let count = sink.count.load(Ordering::Relaxed);
    if !cfg.count_only {
        debug_assert_eq!(facets.len() as u64, count);
    }
    Ok((count, facets))
}

fn parallel_enumeration(
    net: &Network,
    total: usize,
    root: Task,
    sink: &Sink,
    workers: usize,
) -> Result<()> {
    use std::sync::atomic::AtomicUsize;
    let queue: Mutex<Vec<Task>> = Mutex::new(vec![root]);
    let pending = AtomicUsize::new(1);
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let task = queue.lock().unwrap().pop();
                match task {
                    Some(task) => {
                        let result = descend(net, total, task, sink, &mut |t| {
                            pending.fetch_add(1, Ordering::SeqCst);
                            queue.lock().unwrap().push(t);
                        });
                        if let Err(e) = result {
                            *failure.lock().unwrap() = Some(e);
                        }
                        pending.fetch_sub(1, Ordering::SeqCst);
                    }
                    None => {
                        if pending.load(Ordering::SeqCst) == 0 {
                            break;
                        }
                        std::thread::yield_now();
                    }
                }
            });
        }
    });
    match failure.into_inner().unwrap() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Enumerates all feasible facets over a bounded domain.
pub fn enumerate_facets(
    net: &Network,
    domain: &ConstraintSystem,
    cfg: &EnumConfig,
) -> Result<FacetSet> {
    let mut cfg = cfg.clone();
    cfg.count_only = false;
    let (_, facets) = run_enumeration(net, domain, &cfg)?;
    Ok(FacetSet {
        facets,
        domain: domain.clone(),
        net_digest: net.digest(),
    })
}

/// Counts feasible facets without materializing them.
pub fn count_facets(net: &Network, domain: &ConstraintSystem, cfg: &EnumConfig) -> Result<u64> {
    let mut cfg = cfg.clone();
    cfg.count_only = true;
    let (count, _) = run_enumeration(net, domain, &cfg)?;
    Ok(count)
}

/// Builds the facet containing `x`: its pattern is the forward pattern of
/// `x` and `x` satisfies the returned system (boundary points fall on the
/// active side).
pub fn facet_of_point(net: &Network, domain: &ConstraintSystem, x: &[Rat]) -> Result<Facet> {
    if !domain.satisfied_by(x) {
        return Err(Error::Schema("point lies outside the domain".into()));
    }
    let (_, pattern) = net.forward(x)?;
    let prop = propagate_affine(net, &pattern.0)?;
    let mut system = domain.clone();
    for (i, (form, &active)) in prop.preactivations.iter().zip(&pattern.0).enumerate() {
        system.push(
            neuron_constraint(form, active),
            Provenance::Neuron { index: i, active },
        );
    }
    let outputs = prop
        .outputs
        .ok_or_else(|| Error::Internal("complete pattern without outputs".into()))?;
    Ok(Facet {
        pattern,
        system,
        output_forms: outputs,
    })
}

// --- JSON serialization (disco-facets-v1) ---------------------------------

fn form_to_json(f: &AffineForm) -> Value {
    json!({
        "coeffs": f.coefficients.iter().map(rat::to_json).collect::<Vec<_>>(),
        "const": rat::to_json(&f.constant),
    })
}

fn form_from_json(v: &Value) -> Result<AffineForm> {
    let coeffs = v
        .get("coeffs")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Schema("affine form missing coeffs".into()))?
        .iter()
        .map(rat::from_json)
        .collect::<Result<Vec<_>>>()?;
    let constant = rat::from_json(
        v.get("const")
            .ok_or_else(|| Error::Schema("affine form missing const".into()))?,
    )?;
    Ok(AffineForm {
        coefficients: coeffs,
        constant,
    })
}

fn constraint_to_json(t: &crate::lp::TaggedConstraint) -> Value {
    let rel = match t.constraint.relation {
        Relation::NonNegative => "ge",
        Relation::StrictlyNegative => "lt",
    };
    let prov = match &t.provenance {
        Provenance::Domain => json!("domain"),
        Provenance::Property => json!("property"),
        Provenance::Neuron { index, active } => json!({"neuron": index, "active": active}),
    };
    let mut v = form_to_json(&t.constraint.form);
    v["rel"] = json!(rel);
    v["prov"] = prov;
    v
}

fn constraint_from_json(v: &Value, dim: usize) -> Result<(LinearConstraint, Provenance)> {
    let form = form_from_json(v)?;
    if form.dim() != dim {
        return Err(Error::Schema(format!(
            "constraint over {} variables in a {}-dimensional system",
            form.dim(),
            dim
        )));
    }
    let relation = match v.get("rel").and_then(Value::as_str) {
        Some("ge") => Relation::NonNegative,
        Some("lt") => Relation::StrictlyNegative,
        other => return Err(Error::Schema(format!("bad relation {other:?}"))),
    };
    let provenance = match v.get("prov") {
        Some(Value::String(s)) if s == "domain" => Provenance::Domain,
        Some(Value::String(s)) if s == "property" => Provenance::Property,
        Some(obj) if obj.get("neuron").is_some() => Provenance::Neuron {
            index: obj.get("neuron").and_then(Value::as_u64).unwrap_or(0) as usize,
            active: obj.get("active").and_then(Value::as_bool).unwrap_or(false),
        },
        other => return Err(Error::Schema(format!("bad provenance {other:?}"))),
    };
    Ok((LinearConstraint { form, relation }, provenance))
}

pub fn system_to_json(sys: &ConstraintSystem) -> Value {
    json!({
        "dim": sys.dim(),
        "constraints": sys.constraints().iter().map(constraint_to_json).collect::<Vec<_>>(),
    })
}

pub fn system_from_json(v: &Value) -> Result<ConstraintSystem> {
    let dim = v
        .get("dim")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Schema("system missing dim".into()))? as usize;
    let mut sys = ConstraintSystem::new(dim);
    for cv in v
        .get("constraints")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Schema("system missing constraints".into()))?
    {
        let (c, p) = constraint_from_json(cv, dim)?;
        sys.push(c, p);
    }
    Ok(sys)
}

impl FacetSet {
    pub fn to_json(&self) -> Value {
        json!({
            "format": "disco-facets-v1",
            "net_digest": self.net_digest,
            "domain": system_to_json(&self.domain),
            "facets": self.facets.iter().map(|f| json!({
                "pattern": f.pattern.to_bit_string(),
                "system": system_to_json(&f.system),
                "outputs": f.output_forms.iter().map(form_to_json).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
        })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        if v.get("format").and_then(Value::as_str) != Some("disco-facets-v1") {
            return Err(Error::Schema("not a disco-facets-v1 document".into()));
        }
        let net_digest = v
            .get("net_digest")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Schema("missing net_digest".into()))?
            .to_string();
        let domain = system_from_json(
            v.get("domain")
                .ok_or_else(|| Error::Schema("missing domain".into()))?,
        )?;
        let mut facets = Vec::new();
        for fv in v
            .get("facets")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Schema("missing facets".into()))?
        {
            let pattern = ActivationPattern::from_bit_string(
                fv.get("pattern")
                    .and_then(Value::as_str)
                    .ok_or_else(|| Error::Schema("facet missing pattern".into()))?,
            )?;
            let system = system_from_json(
                fv.get("system")
                    .ok_or_else(|| Error::Schema("facet missing system".into()))?,
            )?;
            let output_forms = fv
                .get("outputs")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Schema("facet missing outputs".into()))?
                .iter()
                .map(form_from_json)
                .collect::<Result<Vec<_>>>()?;
            facets.push(Facet {
                pattern,
                system,
                output_forms,
            });
        }
        Ok(FacetSet {
            facets,
            domain,
            net_digest,
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

    pub fn patterns(&self) -> std::collections::BTreeSet<ActivationPattern> {
        self.facets.iter().map(|f| f.pattern.clone()).collect()
    }
}

/// Reference oracle: tries all 2^m patterns and keeps the strictly
/// feasible ones. Exponential; test scale only.
pub fn exhaustive_patterns(
    net: &Network,
    domain: &ConstraintSystem,
) -> Result<std::collections::BTreeSet<ActivationPattern>> {
    let m = net.relu_count();
    assert!(m <= 20, "exhaustive oracle is exponential; {m} ReLUs is too many");
    let mut out = std::collections::BTreeSet::new();
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
        if matches!(feasible_strict(&sys), LpOutcome::Feasible { .. }) {
            out.insert(ActivationPattern(pattern));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{axis_network, identity_network, random_network, sample_in_box, toy_network};
    use crate::rat::{frac, int};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn box_domain(bx: &[(Rat, Rat)]) -> ConstraintSystem {
        ConstraintSystem::from_box(bx).unwrap()
    }

    #[test]
    fn identity_two_facets() {
        let net = identity_network();
        let dom = box_domain(&[(int(-1), int(1))]);
        let set = enumerate_facets(&net, &dom, &EnumConfig::default()).unwrap();
        let pats: Vec<_> = set.facets.iter().map(|f| f.pattern.to_bit_string()).collect();
        assert_eq!(pats, vec!["0", "1"]);
        assert_eq!(count_facets(&net, &dom, &EnumConfig::default()).unwrap(), 2);
    }

    #[test]
    fn positive_domain_single_facet() {
        let net = identity_network();
        let dom = box_domain(&[(frac(1, 2), int(2))]);
        let set = enumerate_facets(&net, &dom, &EnumConfig::default()).unwrap();
        assert_eq!(set.facets.len(), 1);
        assert_eq!(set.facets[0].pattern.to_bit_string(), "1");
    }

    #[test]
    fn toy_network_has_unreachable_pattern() {
        let net = toy_network();
        let dom = box_domain(&[(int(-2), int(2)), (int(-2), int(2))]);
        let set = enumerate_facets(&net, &dom, &EnumConfig::default()).unwrap();
        assert_eq!(set.facets.len(), 7);
        assert!(!set
            .patterns()
            .contains(&ActivationPattern::from_bit_string("110").unwrap()));
    }

    #[test]
    fn axis_network_reaches_all_patterns() {
        let net = axis_network();
        let dom = box_domain(&[
            (int(-1), int(1)),
            (int(-1), int(1)),
            (int(-1), int(1)),
        ]);
        assert_eq!(count_facets(&net, &dom, &EnumConfig::default()).unwrap(), 8);
    }

    #[test]
    fn empty_domain_is_an_error() {
        let net = identity_network();
        let mut dom = box_domain(&[(int(0), int(1))]);
        // x >= 2 contradicts the box
        let mut f = AffineForm::coordinate(1, 0);
        f.constant = int(-2);
        dom.push(LinearConstraint::non_negative(f), Provenance::Domain);
        assert!(matches!(
            enumerate_facets(&net, &dom, &EnumConfig::default()),
            Err(Error::EmptyDomain)
        ));
    }

    #[test]
    fn matches_exhaustive_oracle_on_random_nets() {
        for seed in 0..8u64 {
            let net = random_network(seed, 2, &[3, 2]);
            let dom = box_domain(&[(int(-2), int(2)), (int(-2), int(2))]);
            let set = enumerate_facets(&net, &dom, &EnumConfig::default()).unwrap();
            let oracle = exhaustive_patterns(&net, &dom).unwrap();
            assert_eq!(set.patterns(), oracle, "seed {seed}");
            assert!(set.facets.len() as u64 <= 1 << net.relu_count());
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let net = random_network(99, 2, &[4, 3]);
        let dom = box_domain(&[(int(-2), int(2)), (int(-2), int(2))]);
        let seq = enumerate_facets(&net, &dom, &EnumConfig::default()).unwrap();
        let par = enumerate_facets(
            &net,
            &dom,
            &EnumConfig {
                parallel: true,
                workers: 4,
                count_only: false,
            },
        )
        .unwrap();
        assert_eq!(seq.patterns(), par.patterns());
    }

    #[test]
    fn facet_of_point_basics() {
        let net = identity_network();
        let dom = box_domain(&[(int(-1), int(1))]);
        let f = facet_of_point(&net, &dom, &[frac(-1, 2)]).unwrap();
        assert_eq!(f.pattern.to_bit_string(), "0");
        assert!(f.system.satisfied_by(&[frac(-1, 2)]));
        // boundary point is assigned to the active facet
        let f = facet_of_point(&net, &dom, &[int(0)]).unwrap();
        assert_eq!(f.pattern.to_bit_string(), "1");
        assert!(f.system.satisfied_by(&[int(0)]));
        assert!(facet_of_point(&net, &dom, &[int(5)]).is_err());
    }

    #[test]
    fn sampled_patterns_are_enumerated() {
        let net = random_network(4, 2, &[3, 3]);
        let bx = vec![(int(-2), int(2)), (int(-2), int(2))];
        let dom = box_domain(&bx);
        let set = enumerate_facets(&net, &dom, &EnumConfig::default()).unwrap();
        let patterns = set.patterns();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..2000 {
            let x = sample_in_box(&mut rng, &bx);
            let (_, p) = net.forward(&x).unwrap();
            assert!(patterns.contains(&p));
        }
    }

    #[test]
    fn output_forms_match_forward_on_witnesses() {
        let net = random_network(12, 2, &[3, 2]);
        let dom = box_domain(&[(int(-2), int(2)), (int(-2), int(2))]);
        let set = enumerate_facets(&net, &dom, &EnumConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bx = vec![(int(-2), int(2)), (int(-2), int(2))];
        for _ in 0..200 {
            let x = sample_in_box(&mut rng, &bx);
            let (y, p) = net.forward(&x).unwrap();
            let facet = set.facets.iter().find(|f| f.pattern == p).unwrap();
            let via: Vec<_> = facet.output_forms.iter().map(|f| f.eval(&x)).collect();
            assert_eq!(y, via);
        }
    }

    #[test]
    fn facet_set_round_trips_through_json() {
        let net = toy_network();
        let dom = box_domain(&[(int(-2), int(2)), (int(-2), int(2))]);
        let set = enumerate_facets(&net, &dom, &EnumConfig::default()).unwrap();
        let back = FacetSet::from_json(&set.to_json()).unwrap();
        assert_eq!(back.net_digest, set.net_digest);
        assert_eq!(back.patterns(), set.patterns());
        assert_eq!(back.facets.len(), set.facets.len());
        for (a, b) in back.facets.iter().zip(&set.facets) {
            assert_eq!(a.output_forms, b.output_forms);
            assert_eq!(a.system.len(), b.system.len());
        }
    }
}
