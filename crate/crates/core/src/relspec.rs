//! Relational properties over k executions sharing one input perturbation.
//!
//! Every execution `i` sees `x_i + δ` for the same `δ`; that coupling is
//! carried by using a single `δ` everywhere downstream rather than separate
//! perturbed copies of each input.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{clause_matrix, ClauseMatrix, Network};
use crate::norm::Norm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropertyKind {
    /// Worst-case number of correctly classified inputs under one shared δ.
    Kuap,
    /// Worst-case number of flipped bits of a binary digit string.
    Hamming,
}

impl fmt::Display for PropertyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PropertyKind::Kuap => "kuap",
            PropertyKind::Hamming => "hamming",
        })
    }
}

impl FromStr for PropertyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kuap" => Ok(PropertyKind::Kuap),
            "hamming" => Ok(PropertyKind::Hamming),
            other => Err(Error::Property(format!("unknown property \"{other}\""))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PropertyInstance {
    pub kind: PropertyKind,
    pub inputs: Vec<Array1<f64>>,
    pub labels: Vec<usize>,
    pub epsilon: f64,
    pub norm: Norm,
    pub clauses: Vec<ClauseMatrix>,
}

impl PropertyInstance {
    pub fn k(&self) -> usize {
        self.inputs.len()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn n_classes(&self) -> usize {
        self.clauses[0].row(0).len()
    }

    /// Same instance with a different radius.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(PropertyInstance {
            epsilon,
            ..self.clone()
        })
    }

    /// Checks the instance against a network's input and output arity.
    pub fn check_network(&self, net: &Network) -> Result<()> {
        if net.input_dim() != self.input_dim() {
            return Err(Error::dim(net.input_dim(), self.input_dim(), "data input dimension"));
        }
        if net.output_dim() != self.n_classes() {
            return Err(Error::dim(net.output_dim(), self.n_classes(), "network output classes"));
        }
        Ok(())
    }

    /// Property value as seen by a count of correct executions: the count itself
    /// for k-UAP, `k - count` for hamming.
    pub fn value_from_correct(&self, correct: usize) -> usize {
        match self.kind {
            PropertyKind::Kuap => correct,
            PropertyKind::Hamming => self.k() - correct,
        }
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::Property(format!(
            "epsilon must be finite and non-negative, got {epsilon}"
        )));
    }
    Ok(())
}

fn check_inputs(inputs: &[Array1<f64>], labels: &[usize]) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::Property("at least one input is required".into()));
    }
    if inputs.len() != labels.len() {
        return Err(Error::Property(format!(
            "{} inputs but {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    let n0 = inputs[0].len();
    if n0 == 0 {
        return Err(Error::Property("inputs must be non-empty vectors".into()));
    }
    for (i, x) in inputs.iter().enumerate() {
        if x.len() != n0 {
            return Err(Error::Property(format!(
                "input {i} has dimension {}, expected {n0}",
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Property(format!("input {i} is not finite")));
        }
    }
    Ok(())
}

pub fn build_kuap(
    inputs: Vec<Array1<f64>>,
    labels: Vec<usize>,
    epsilon: f64,
    norm: Norm,
    n_classes: usize,
) -> Result<PropertyInstance> {
    check_inputs(&inputs, &labels)?;
    check_epsilon(epsilon)?;
    let clauses = labels
        .iter()
        .map(|&l| clause_matrix(l, n_classes))
        .collect::<Result<Vec<_>>>()?;
    Ok(PropertyInstance {
        kind: PropertyKind::Kuap,
        inputs,
        labels,
        epsilon,
        norm,
        clauses,
    })
}

pub fn build_hamming(
    inputs: Vec<Array1<f64>>,
    labels: Vec<usize>,
    epsilon: f64,
    norm: Norm,
) -> Result<PropertyInstance> {
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Property(format!(
            "hamming labels must be binary digits, got {bad}"
        )));
    }
    let mut inst = build_kuap(inputs, labels, epsilon, norm, 2)?;
    inst.kind = PropertyKind::Hamming;
    Ok(inst)
}

pub fn build(
    kind: PropertyKind,
    inputs: Vec<Array1<f64>>,
    labels: Vec<usize>,
    epsilon: f64,
    norm: Norm,
    n_classes: usize,
) -> Result<PropertyInstance> {
    match kind {
        PropertyKind::Kuap => build_kuap(inputs, labels, epsilon, norm, n_classes),
        PropertyKind::Hamming => {
            if n_classes != 2 {
                return Err(Error::Property(format!(
                    "hamming needs a binary classifier, network has {n_classes} outputs"
                )));
            }
            build_hamming(inputs, labels, epsilon, norm)
        }
    }
}

/// Number of executions whose clauses all hold at `N(x_i + δ)`.
pub fn mu(instance: &PropertyInstance, delta: ArrayView1<f64>, net: &Network) -> Result<usize> {
    if delta.len() != instance.input_dim() {
        return Err(Error::dim(instance.input_dim(), delta.len(), "perturbation"));
    }
    let mut count = 0;
    for (x, clauses) in instance.inputs.iter().zip(&instance.clauses) {
        let y = net.forward((x + &delta).view())?;
        if clauses.satisfied(y.view()) {
            count += 1;
        }
    }
    Ok(count)
}

/// On-disk data layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataFile {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub epsilon: f64,
    #[serde(default = "default_norm")]
    pub norm: Norm,
}

fn default_norm() -> Norm {
    Norm::Inf
}

impl DataFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn inputs(&self) -> Vec<Array1<f64>> {
        self.inputs.iter().cloned().map(Array1::from).collect()
    }

    pub fn from_instance(instance: &PropertyInstance) -> Self {
        DataFile {
            inputs: instance.inputs.iter().map(|x| x.to_vec()).collect(),
            labels: instance.labels.clone(),
            epsilon: instance.epsilon,
            norm: instance.norm,
        }
    }
}
