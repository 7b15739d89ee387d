//! Feed-forward dense ReLU networks and per-label output clauses.
//!
//! A [`Network`] is an ordered list of dense affine layers and ReLU layers.
//! Every ReLU is preceded by an affine layer and the last layer is affine, so
//! each ReLU acts on the pre-activation produced by the affine layer before it.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Affine { weight: Array2<f64>, bias: Array1<f64> },
    Relu,
}

impl Layer {
    pub fn affine(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::dim(weight.nrows(), bias.len(), "bias length"));
        }
        Ok(Layer::Affine { weight, bias })
    }

    pub fn is_relu(&self) -> bool {
        matches!(self, Layer::Relu)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    input_dim: usize,
    output_dim: usize,
}

impl Network {
    /// Validates layer ordering and shapes. Errors carry the 1-based layer index.
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Layer {
                layer: 0,
                message: "input_dim must be positive".into(),
            });
        }
        if layers.is_empty() {
            return Err(Error::Layer {
                layer: 0,
                message: "network has no layers".into(),
            });
        }
        let mut width = input_dim;
        let mut prev_affine = false;
        for (idx, layer) in layers.iter().enumerate() {
            let number = idx + 1;
            match layer {
                Layer::Affine { weight, bias } => {
                    if weight.ncols() != width {
                        return Err(Error::Layer {
                            layer: number,
                            message: format!(
                                "dimension mismatch: weight expects {} inputs, previous layer produces {}",
                                weight.ncols(),
                                width
                            ),
                        });
                    }
                    if weight.nrows() != bias.len() {
                        return Err(Error::Layer {
                            layer: number,
                            message: format!(
                                "dimension mismatch: {} weight rows but bias of length {}",
                                weight.nrows(),
                                bias.len()
                            ),
                        });
                    }
                    if weight.nrows() == 0 {
                        return Err(Error::Layer {
                            layer: number,
                            message: "affine layer has zero outputs".into(),
                        });
                    }
                    if weight.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
                        return Err(Error::Layer {
                            layer: number,
                            message: "non-finite parameter".into(),
                        });
                    }
                    width = weight.nrows();
                    prev_affine = true;
                }
                Layer::Relu => {
                    if !prev_affine {
                        return Err(Error::Layer {
                            layer: number,
                            message: "relu must follow an affine layer".into(),
                        });
                    }
                    prev_affine = false;
                }
            }
        }
        if !prev_affine {
            return Err(Error::Layer {
                layer: layers.len(),
                message: "final layer must be affine".into(),
            });
        }
        Ok(Network {
            layers,
            input_dim,
            output_dim: width,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Number of ReLU layers.
    pub fn relu_count(&self) -> usize {
        self.layers.iter().filter(|l| l.is_relu()).count()
    }

    /// Exact evaluation of the affine/ReLU composition.
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::dim(self.input_dim, x.len(), "network input"));
        }
        let mut h = x.to_owned();
        for layer in &self.layers {
            h = match layer {
                Layer::Affine { weight, bias } => weight.dot(&h) + bias,
                Layer::Relu => h.mapv(|v| v.max(0.0)),
            };
        }
        Ok(h)
    }

    pub fn to_json(&self) -> NetworkFile {
        NetworkFile {
            input_dim: self.input_dim,
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Affine { weight, bias } => LayerFile::Dense {
                        weight: weight.outer_iter().map(|r| r.to_vec()).collect(),
                        bias: bias.to_vec(),
                    },
                    Layer::Relu => LayerFile::Relu,
                })
                .collect(),
        }
    }
}

/// On-disk network layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkFile {
    pub input_dim: usize,
    pub layers: Vec<LayerFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerFile {
    Dense {
        weight: Vec<Vec<f64>>,
        bias: Vec<f64>,
    },
    Relu,
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_network(&text).map_err(|e| match e {
        Error::Parse { message, .. } => Error::Parse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

/// Parses the network JSON format. Layer errors name the 1-based layer index.
pub fn parse_network(text: &str) -> Result<Network> {
    let parse_err = |message: String| Error::Parse {
        path: "<network>".into(),
        message,
    };
    let root: Value = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    let input_dim = root
        .get("input_dim")
        .and_then(Value::as_u64)
        .ok_or_else(|| parse_err("missing or invalid \"input_dim\"".into()))? as usize;
    let raw_layers = root
        .get("layers")
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err("missing \"layers\" array".into()))?;

    let mut layers = Vec::with_capacity(raw_layers.len());
    for (idx, raw) in raw_layers.iter().enumerate() {
        let number = idx + 1;
        let kind = raw.get("type").and_then(Value::as_str).unwrap_or("<missing>");
        let layer = match kind {
            "relu" => Layer::Relu,
            "dense" => {
                let file: LayerFile =
                    serde_json::from_value(raw.clone()).map_err(|e| Error::Layer {
                        layer: number,
                        message: e.to_string(),
                    })?;
                let LayerFile::Dense { weight, bias } = file else {
                    unreachable!("tagged as dense")
                };
                let rows = weight.len();
                let cols = weight.first().map_or(0, Vec::len);
                if weight.iter().any(|r| r.len() != cols) {
                    return Err(Error::Layer {
                        layer: number,
                        message: "ragged weight matrix".into(),
                    });
                }
                let flat: Vec<f64> = weight.into_iter().flatten().collect();
                let weight = Array2::from_shape_vec((rows, cols), flat).map_err(|e| {
                    Error::Layer {
                        layer: number,
                        message: e.to_string(),
                    }
                })?;
                Layer::Affine {
                    weight,
                    bias: Array1::from(bias),
                }
            }
            other => {
                return Err(Error::Layer {
                    layer: number,
                    message: format!("unsupported layer kind \"{other}\""),
                })
            }
        };
        layers.push(layer);
    }
    Network::new(input_dim, layers)
}

/// Clause vectors `c_j` for one label: `c_jᵀ y ≥ 0` for every row iff the label
/// scores at least as high as every other class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClauseMatrix {
    rows: Vec<Array1<f64>>,
    /// Competing class of each row.
    others: Vec<usize>,
    label: usize,
}

impl ClauseMatrix {
    pub fn rows(&self) -> &[Array1<f64>] {
        &self.rows
    }

    pub fn row(&self, j: usize) -> &Array1<f64> {
        &self.rows[j]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn label(&self) -> usize {
        self.label
    }

    /// Class compared against the label in row `j`.
    pub fn other_class(&self, j: usize) -> usize {
        self.others[j]
    }

    /// True iff every clause holds (ties count as satisfied).
    pub fn satisfied(&self, y: ArrayView1<f64>) -> bool {
        self.rows.iter().all(|c| c.dot(&y) >= 0.0)
    }
}

/// One row per class other than `label`; the vacuous self-comparison is dropped.
pub fn clause_matrix(label: usize, n_classes: usize) -> Result<ClauseMatrix> {
    if n_classes < 2 {
        return Err(Error::Property(format!(
            "need at least two output classes, got {n_classes}"
        )));
    }
    if label >= n_classes {
        return Err(Error::Property(format!(
            "label {label} out of range for {n_classes} classes"
        )));
    }
    let others: Vec<usize> = (0..n_classes).filter(|&j| j != label).collect();
    let rows = others
        .iter()
        .map(|&j| {
            let mut c = Array1::zeros(n_classes);
            c[label] = 1.0;
            c[j] = -1.0;
            c
        })
        .collect();
    Ok(ClauseMatrix {
        rows,
        others,
        label,
    })
}
