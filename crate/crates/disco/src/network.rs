//! Network data model: layered fully-connected ReLU nets with exact
//! rational parameters, the canonical `disco-net-v1` JSON format, exact
//! forward evaluation and the benchmark layer shapes.

use num_traits::{Signed, Zero};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::rat::{self, Rat};
use crate::{Error, Result};

/// One fully-connected layer. `weights` rows correspond to output neurons.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layer {
    pub weights: Vec<Vec<Rat>>,
    pub bias: Vec<Rat>,
    pub has_relu: bool,
}

impl Layer {
    pub fn out_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.first().map_or(0, |r| r.len())
    }
}

/// The 0/1 states of all ReLU neurons, in topological (layer-major) order.
/// A set bit means active, i.e. pre-activation >= 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct ActivationPattern(pub Vec<bool>);

impl ActivationPattern {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Compact text form, e.g. `"0011"`.
    pub fn to_bit_string(&self) -> String {
        self.0.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn from_bit_string(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Schema(format!("bad pattern character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(ActivationPattern)
    }
}

/// A validated fully-connected ReLU network. Immutable after construction;
/// all operations are pure, so values can be shared freely across threads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    input_dim: usize,
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Schema("input_dim must be positive".into()));
        }
        if layers.is_empty() {
            return Err(Error::Schema("network needs at least one layer".into()));
        }
        let mut expect = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if layer.weights.is_empty() {
                return Err(Error::Dimension {
                    layer: i,
                    detail: "empty weight matrix".into(),
                });
            }
            for row in &layer.weights {
                if row.len() != expect {
                    return Err(Error::Dimension {
                        layer: i,
                        detail: format!("weight row has {} entries, expected {}", row.len(), expect),
                    });
                }
            }
            if layer.bias.len() != layer.weights.len() {
                return Err(Error::Dimension {
                    layer: i,
                    detail: format!(
                        "bias length {} != weight rows {}",
                        layer.bias.len(),
                        layer.weights.len()
                    ),
                });
            }
            expect = layer.out_dim();
        }
        if layers.last().unwrap().has_relu {
            return Err(Error::Schema(
                "final layer must be a pure affine output head (no ReLU)".into(),
            ));
        }
        Ok(Network { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Total number of ReLU neurons (the pattern length).
    pub fn relu_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.has_relu)
            .map(|l| l.out_dim())
            .sum()
    }

    /// (layer, neuron) coordinates of every ReLU neuron in topological order.
    pub fn relu_coords(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            if layer.has_relu {
                for j in 0..layer.out_dim() {
                    out.push((li, j));
                }
            }
        }
        out
    }

    /// Exact forward pass. The activation bit is 1 iff the pre-activation
    /// is >= 0: the boundary counts as active.
    pub fn forward(&self, x: &[Rat]) -> Result<(Vec<Rat>, ActivationPattern)> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension {
                layer: 0,
                detail: format!("input has {} entries, expected {}", x.len(), self.input_dim),
            });
        }
        let mut cur: Vec<Rat> = x.to_vec();
        let mut bits = Vec::with_capacity(self.relu_count());
        for layer in &self.layers {
            let mut next = Vec::with_capacity(layer.out_dim());
            for (row, b) in layer.weights.iter().zip(&layer.bias) {
                let mut acc = b.clone();
                for (w, v) in row.iter().zip(&cur) {
                    acc += w * v;
                }
                if layer.has_relu {
                    let active = !acc.is_negative();
                    bits.push(active);
                    next.push(if active { acc } else { Rat::zero() });
                } else {
                    next.push(acc);
                }
            }
            cur = next;
        }
        Ok((cur, ActivationPattern(bits)))
    }

    /// Content digest over the canonical JSON form; ties a `FacetSet` to
    /// the network it was enumerated for.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(&self.to_json()).expect("canonical JSON");
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        let out = h.finalize();
        out.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> Value {
        json!({
            "format": "disco-net-v1",
            "input_dim": self.input_dim,
            "layers": self.layers.iter().map(|l| json!({
                "weights": l.weights.iter()
                    .map(|row| row.iter().map(rat::to_json).collect::<Vec<_>>())
                    .collect::<Vec<_>>(),
                "bias": l.bias.iter().map(rat::to_json).collect::<Vec<_>>(),
                "relu": l.has_relu,
            })).collect::<Vec<_>>(),
        })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Schema("network document must be a JSON object".into()))?;
        if let Some(fmt) = obj.get("format") {
            if fmt != "disco-net-v1" {
                return Err(Error::Schema(format!("unsupported format {fmt}")));
            }
        }
        let input_dim = obj
            .get("input_dim")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Schema("missing positive integer input_dim".into()))?
            as usize;
        let layers_v = obj
            .get("layers")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Schema("missing layers array".into()))?;
        let mut layers = Vec::with_capacity(layers_v.len());
        for (i, lv) in layers_v.iter().enumerate() {
            let lobj = lv
                .as_object()
                .ok_or_else(|| Error::Schema(format!("layer {i} is not an object")))?;
            let weights_v = lobj
                .get("weights")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Schema(format!("layer {i}: missing weights")))?;
            let mut weights = Vec::with_capacity(weights_v.len());
            for row in weights_v {
                let row_v = row
                    .as_array()
                    .ok_or_else(|| Error::Schema(format!("layer {i}: weight row not an array")))?;
                weights.push(
                    row_v
                        .iter()
                        .map(rat::from_json)
                        .collect::<Result<Vec<_>>>()
                        .map_err(|e| Error::Schema(format!("layer {i}: {e}")))?,
                );
            }
            let bias = lobj
                .get("bias")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Schema(format!("layer {i}: missing bias")))?
                .iter()
                .map(rat::from_json)
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Schema(format!("layer {i}: {e}")))?;
            let has_relu = lobj
                .get("relu")
                .and_then(Value::as_bool)
                .ok_or_else(|| Error::Schema(format!("layer {i}: missing boolean relu flag")))?;
            layers.push(Layer {
                weights,
                bias,
                has_relu,
            });
        }
        Network::new(input_dim, layers)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let v: Value = serde_json::from_str(&text)?;
        Self::from_json(&v)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// A hidden-layer shape from the benchmark table, plus the implicit
/// width-1 affine output head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub name: String,
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    /// Set when an odd input dimension forced floor division.
    pub rounded: bool,
}

impl Architecture {
    pub fn output_dim(&self) -> usize {
        1
    }
}

/// Resolves a named benchmark shape for input dimension `n`. Widths that
/// involve N/2 or N/4 are floored for odd N, with `rounded` set so callers
/// can warn.
pub fn make_architecture(name: &str, n: usize) -> Result<Architecture> {
    if n == 0 {
        return Err(Error::Schema("input dimension must be positive".into()));
    }
    let hidden = match name {
        "simple" => vec![2 * n, n, n / 2],
        "big" => vec![3 * n, n, n / 2],
        "super" => vec![4 * n, 2 * n, n],
        "perception" => vec![n / 2, n / 4],
        other => return Err(Error::UnknownArchitecture(other.into())),
    };
    if hidden.iter().any(|&w| w == 0) {
        return Err(Error::Schema(format!(
            "architecture {name} degenerates to a zero-width layer at N={n}"
        )));
    }
    let rounded = match name {
        "perception" => n % 4 != 0,
        "super" => false,
        _ => n % 2 != 0,
    };
    Ok(Architecture {
        name: name.into(),
        input_dim: n,
        hidden,
        rounded,
    })
}
