//! ReLU multilayer perceptron dynamics `x⁺ = f(x, u)`.
//!
//! Hidden layers apply `max(0, ·)`; the last layer is affine. The model file
//! stores every layer as an explicit row-major weight matrix plus bias.

use std::path::Path;

use serde_json::{json, Value};
use thiserror::Error;

use crate::boxes::RealBox;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("dimension mismatch in {what}{}: expected {expected}, got {got}", layer_suffix(.layer))]
    DimMismatch { what: &'static str, layer: Option<usize>, expected: usize, got: usize },
    #[error("non-finite value in layer {layer}")]
    NonFinite { layer: usize },
    #[error("schema error{} at `{field}`: {message}", layer_suffix(.layer))]
    Schema { layer: Option<usize>, field: String, message: String },
    #[error("invalid control domain: lower {lower} exceeds upper {upper} in dimension {dim}")]
    InvalidDomain { dim: usize, lower: f64, upper: f64 },
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

fn layer_suffix(layer: &Option<usize>) -> String {
    match layer {
        Some(l) => format!(" (layer {l})"),
        None => String::new(),
    }
}

/// One affine map `z ↦ W z + B` with `W` stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Layer {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self, NetworkError> {
        if weights.len() != rows * cols {
            return Err(NetworkError::DimMismatch {
                what: "weights",
                layer: None,
                expected: rows * cols,
                got: weights.len(),
            });
        }
        if bias.len() != rows {
            return Err(NetworkError::DimMismatch { what: "bias", layer: None, expected: rows, got: bias.len() });
        }
        Ok(Self { rows, cols, weights, bias })
    }

    pub fn from_rows(rows: &[Vec<f64>], bias: Vec<f64>) -> Result<Self, NetworkError> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(NetworkError::DimMismatch { what: "weight row", layer: None, expected: cols, got: bad.len() });
        }
        Self::new(rows.len(), cols, rows.concat(), bias)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.cols..(j + 1) * self.cols]
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|j| self.row(j).iter().zip(z).map(|(w, v)| w * v).sum::<f64>() + self.bias[j]).collect()
    }
}

/// Pre- and post-activation values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `ẑ⁽ⁱ⁾` for every layer; the last entry is the successor state.
    pub pre: Vec<Vec<f64>>,
    /// `z⁽ⁱ⁾ = max(0, ẑ⁽ⁱ⁾)` for hidden layers.
    pub post: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    n_x: usize,
    n_u: usize,
    layers: Vec<Layer>,
}

impl Mlp {
    pub fn new(n_x: usize, n_u: usize, layers: Vec<Layer>) -> Result<Self, NetworkError> {
        if layers.is_empty() {
            return Err(NetworkError::Schema {
                layer: None,
                field: "layers".into(),
                message: "at least one layer required".into(),
            });
        }
        let mut width = n_x + n_u;
        for (i, l) in layers.iter().enumerate() {
            if l.cols != width {
                return Err(NetworkError::DimMismatch {
                    what: "weight columns",
                    layer: Some(i + 1),
                    expected: width,
                    got: l.cols,
                });
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(NetworkError::NonFinite { layer: i + 1 });
            }
            width = l.rows;
        }
        if width != n_x {
            return Err(NetworkError::DimMismatch {
                what: "output width",
                layer: Some(layers.len()),
                expected: n_x,
                got: width,
            });
        }
        Ok(Self { n_x, n_u, layers })
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Neuron counts of the hidden layers.
    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(Layer::rows).collect()
    }

    fn check_inputs(&self, x: &[f64], u: &[f64]) -> Result<(), NetworkError> {
        if x.len() != self.n_x {
            return Err(NetworkError::DimMismatch { what: "state", layer: None, expected: self.n_x, got: x.len() });
        }
        if u.len() != self.n_u {
            return Err(NetworkError::DimMismatch { what: "control", layer: None, expected: self.n_u, got: u.len() });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, NetworkError> {
        self.check_inputs(x, u)?;
        let mut z: Vec<f64> = x.iter().chain(u).copied().collect();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            z = l.apply(&z);
            if i < last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        Ok(z)
    }

    pub fn forward_trace(&self, x: &[f64], u: &[f64]) -> Result<ForwardTrace, NetworkError> {
        self.check_inputs(x, u)?;
        let mut z: Vec<f64> = x.iter().chain(u).copied().collect();
        let mut trace = ForwardTrace { pre: Vec::new(), post: Vec::new() };
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let pre = l.apply(&z);
            trace.pre.push(pre.clone());
            if i < last {
                z = pre.iter().map(|v| v.max(0.0)).collect();
                trace.post.push(z.clone());
            }
        }
        Ok(trace)
    }

    pub fn to_json(&self) -> Value {
        let layers: Vec<Value> = self
            .layers
            .iter()
            .map(|l| {
                let rows: Vec<Vec<f64>> = (0..l.rows).map(|j| l.row(j).to_vec()).collect();
                json!({ "rows": l.rows, "cols": l.cols, "weights": rows, "bias": l.bias })
            })
            .collect();
        json!({ "format": "relu-mlp", "version": 1, "n_x": self.n_x, "n_u": self.n_u, "layers": layers })
    }

    pub fn from_json(v: &Value) -> Result<Self, NetworkError> {
        let top = |field: &str, message: &str| NetworkError::Schema {
            layer: None,
            field: field.into(),
            message: message.into(),
        };
        let obj = v.as_object().ok_or_else(|| top("$", "expected an object"))?;
        let n_x = get_usize(obj.get("n_x"), None, "n_x")?;
        let n_u = get_usize(obj.get("n_u"), None, "n_u")?;
        let arr =
            obj.get("layers").and_then(Value::as_array).ok_or_else(|| top("layers", "expected an array of layers"))?;
        let mut layers = Vec::with_capacity(arr.len());
        for (i, lv) in arr.iter().enumerate() {
            let li = Some(i + 1);
            let lo = lv.as_object().ok_or(NetworkError::Schema {
                layer: li,
                field: "$".into(),
                message: "expected an object".into(),
            })?;
            let rows = get_usize(lo.get("rows"), li, "rows")?;
            let cols = get_usize(lo.get("cols"), li, "cols")?;
            let wrows = lo.get("weights").and_then(Value::as_array).ok_or(NetworkError::Schema {
                layer: li,
                field: "weights".into(),
                message: "expected an array of rows".into(),
            })?;
            if wrows.len() != rows {
                return Err(NetworkError::DimMismatch {
                    what: "weight rows",
                    layer: li,
                    expected: rows,
                    got: wrows.len(),
                });
            }
            let mut weights = Vec::with_capacity(rows * cols);
            for (r, rv) in wrows.iter().enumerate() {
                let field = format!("weights[{r}]");
                let vals = get_f64s(Some(rv), li, &field)?;
                if vals.len() != cols {
                    return Err(NetworkError::DimMismatch {
                        what: "weight columns",
                        layer: li,
                        expected: cols,
                        got: vals.len(),
                    });
                }
                weights.extend(vals);
            }
            let bias = get_f64s(lo.get("bias"), li, "bias")?;
            if bias.len() != rows {
                return Err(NetworkError::DimMismatch { what: "bias", layer: li, expected: rows, got: bias.len() });
            }
            layers.push(Layer { rows, cols, weights, bias });
        }
        Mlp::new(n_x, n_u, layers)
    }
}

fn get_usize(v: Option<&Value>, layer: Option<usize>, field: &str) -> Result<usize, NetworkError> {
    v.and_then(Value::as_u64).map(|n| n as usize).ok_or_else(|| NetworkError::Schema {
        layer,
        field: field.into(),
        message: "missing or not a non-negative integer".into(),
    })
}

fn get_f64s(v: Option<&Value>, layer: Option<usize>, field: &str) -> Result<Vec<f64>, NetworkError> {
    let err =
        || NetworkError::Schema { layer, field: field.into(), message: "missing or not an array of numbers".into() };
    v.and_then(Value::as_array).ok_or_else(err)?.iter().map(|x| x.as_f64().ok_or_else(err)).collect()
}

/// Parses a model document.
pub fn parse_mlp(text: &str) -> Result<Mlp, NetworkError> {
    let v: Value = serde_json::from_str(text).map_err(|e| NetworkError::Schema {
        layer: None,
        field: "$".into(),
        message: e.to_string(),
    })?;
    Mlp::from_json(&v)
}

pub fn load_mlp(path: &Path) -> Result<Mlp, NetworkError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| NetworkError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_mlp(&text)
}

pub fn save_mlp(m: &Mlp, path: &Path) -> Result<(), NetworkError> {
    let text = serde_json::to_string_pretty(&m.to_json()).expect("model serializes");
    std::fs::write(path, text)
        .map_err(|e| NetworkError::Io { path: path.display().to_string(), message: e.to_string() })
}

/// Exact ReLU form of `x⁺ = A x + Bu u + c` using `t = max(0,t) − max(0,−t)`.
pub fn linear_to_mlp(a: &[Vec<f64>], bu: &[Vec<f64>], c: &[f64]) -> Result<Mlp, NetworkError> {
    let n_x = a.len();
    let n_u = bu.first().map_or(0, Vec::len);
    if bu.len() != n_x {
        return Err(NetworkError::DimMismatch { what: "Bu rows", layer: None, expected: n_x, got: bu.len() });
    }
    if c.len() != n_x {
        return Err(NetworkError::DimMismatch { what: "offset", layer: None, expected: n_x, got: c.len() });
    }
    let mut w1 = Vec::with_capacity(2 * n_x);
    for sign in [1.0, -1.0] {
        for j in 0..n_x {
            if a[j].len() != n_x {
                return Err(NetworkError::DimMismatch {
                    what: "A columns",
                    layer: None,
                    expected: n_x,
                    got: a[j].len(),
                });
            }
            if bu[j].len() != n_u {
                return Err(NetworkError::DimMismatch {
                    what: "Bu columns",
                    layer: None,
                    expected: n_u,
                    got: bu[j].len(),
                });
            }
            w1.push(a[j].iter().chain(&bu[j]).map(|v| sign * v).collect::<Vec<f64>>());
        }
    }
    let b1: Vec<f64> = c.iter().copied().chain(c.iter().map(|v| -v)).collect();
    let w2: Vec<Vec<f64>> = (0..n_x)
        .map(|j| {
            let mut r = vec![0.0; 2 * n_x];
            r[j] = 1.0;
            r[n_x + j] = -1.0;
            r
        })
        .collect();
    Mlp::new(n_x, n_u, vec![Layer::from_rows(&w1, b1)?, Layer::from_rows(&w2, vec![0.0; n_x])?])
}

/// Admissible control box `U = [u̲, ū]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ControlDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, NetworkError> {
        if lower.len() != upper.len() {
            return Err(NetworkError::DimMismatch {
                what: "control bounds",
                layer: None,
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (j, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l <= u) || !l.is_finite() || !u.is_finite() {
                return Err(NetworkError::InvalidDomain { dim: j, lower: *l, upper: *u });
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn as_box(&self) -> RealBox {
        RealBox { lo: self.lower.clone(), hi: self.upper.clone() }
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.len() == self.dim() && u.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, h))| l <= v && v <= h)
    }

    pub fn clamp(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(self.lower.iter().zip(&self.upper)).map(|(v, (l, h))| v.clamp(*l, *h)).collect()
    }
}
