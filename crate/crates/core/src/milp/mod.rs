//! LP and MILP solving, and the encodings used to combine linear bounds of
//! several executions over one shared perturbation.
//!
//! The MILP keeps one real variable `o_{i,j}` per execution and clause, lower
//! bounded by every available linear form of that clause. An indicator
//! `z_i = 1` may only be chosen when no clause of execution `i` can be
//! violated: a violation of clause `j` is selected by `s_{i,j} = 1`, which
//! forces `o_{i,j} ≤ 0` through a per-variable big-M `U_{i,j}`, and
//! `Σ_j s_{i,j} ≥ 1 − z_i` links the two.

mod bnb;
mod lp;

use std::fmt;

use ndarray::ArrayView1;

pub use bnb::{milp_solve, MilpSolution};
pub use lp::{lp_solve, Constraint, LinearProgram, LpOutcome, Relation, Sense};

use crate::crown::LinearForm;
use crate::error::{Error, Result};
use crate::norm::Norm;
use crate::relspec::{PropertyInstance, PropertyKind};

/// Linear lower bounds per execution and clause: `forms[i][j]` holds every
/// available form for clause `j` of execution `i`. Executions outside the
/// model may hold empty lists.
pub type Approximations = Vec<Vec<Vec<LinearForm>>>;

/// `min t` s.t. `L_iᵀ(x_i + δ) + b_i ≤ t` for all `i`, `‖δ‖_∞ ≤ ε`.
/// Variables are `δ` followed by `t`.
pub fn build_lp_pairwise(
    forms: &[LinearForm],
    centers: &[ArrayView1<f64>],
    epsilon: f64,
    norm: Norm,
) -> Result<LinearProgram> {
    if !norm.is_inf() {
        return Err(Error::Precondition(format!(
            "shared-perturbation LP supports only the inf norm, got {norm}"
        )));
    }
    if forms.is_empty() || forms.len() != centers.len() {
        return Err(Error::Precondition("forms and centers must align and be non-empty".into()));
    }
    let n0 = forms[0].coeffs.len();
    let mut lp = LinearProgram::new(n0 + 1, Sense::Minimize);
    lp.objective[n0] = 1.0;
    for b in lp.bounds.iter_mut().take(n0) {
        *b = (-epsilon, epsilon);
    }
    for (form, x) in forms.iter().zip(centers) {
        if form.coeffs.len() != n0 || x.len() != n0 {
            return Err(Error::dim(n0, form.coeffs.len().max(x.len()), "pairwise lp form"));
        }
        let mut row: Vec<f64> = form.coeffs.to_vec();
        row.push(-1.0);
        lp.add(row, Relation::Le, -form.center_value(*x));
    }
    Ok(lp)
}

/// Removes forms that are pointwise dominated on the box by another kept form.
fn prune_dominated(forms: &[LinearForm], x: ArrayView1<f64>, epsilon: f64) -> Vec<LinearForm> {
    let mut kept: Vec<(LinearForm, f64)> = Vec::new();
    let dominates = |a: &(LinearForm, f64), b: &(LinearForm, f64)| {
        let gap = a.1 - b.1;
        let spread: f64 = a
            .0
            .coeffs
            .iter()
            .zip(b.0.coeffs.iter())
            .map(|(p, q)| (p - q).abs())
            .sum();
        gap - epsilon * spread >= 0.0
    };
    for f in forms {
        let cand = (f.clone(), f.center_value(x));
        if kept.iter().any(|k| dominates(k, &cand)) {
            continue;
        }
        kept.retain(|k| !dominates(&cand, k));
        kept.push(cand);
    }
    kept.into_iter().map(|(f, _)| f).collect()
}

#[derive(Debug, Clone)]
pub struct MilpModel {
    pub lp: LinearProgram,
    /// Binary variable indices: every `z_i` first, then every `s_{i,j}`.
    pub binaries: Vec<usize>,
    /// `(execution, variable)` for each indicator `z_i`.
    pub indicators: Vec<(usize, usize)>,
    pub n_delta: usize,
    /// Added to the LP objective to obtain the property value.
    pub constant: f64,
    pub kind: PropertyKind,
    pub names: Vec<String>,
}

impl MilpModel {
    pub fn sense(&self) -> Sense {
        self.lp.sense
    }

    pub fn num_binaries(&self) -> usize {
        self.binaries.len()
    }
}

/// Encodes the k-UAP (minimize `Σ z_i + k̄`) or hamming (maximize
/// `|I| − Σ z_i`) program over the executions in `included`; every other
/// execution counts as always correct.
pub fn build_milp(
    instance: &PropertyInstance,
    approximations: &Approximations,
    included: &[usize],
) -> Result<MilpModel> {
    if !instance.norm.is_inf() {
        return Err(Error::Precondition(format!(
            "MILP encoding supports only the inf norm, got {}",
            instance.norm
        )));
    }
    if approximations.len() != instance.k() {
        return Err(Error::dim(instance.k(), approximations.len(), "approximations per execution"));
    }
    let eps = instance.epsilon;
    let n0 = instance.input_dim();
    let mut names: Vec<String> = (0..n0).map(|d| format!("d{d}")).collect();
    let mut bounds = vec![(-eps, eps); n0];

    struct Block {
        exec: usize,
        z: usize,
        clauses: Vec<(usize, usize, f64, Vec<LinearForm>)>,
    }
    let mut blocks = Vec::new();
    let mut next = n0;
    for &i in included {
        if i >= instance.k() {
            return Err(Error::Precondition(format!("execution {i} out of range")));
        }
        let x = instance.inputs[i].view();
        let m = instance.clauses[i].len();
        if approximations[i].len() != m {
            return Err(Error::Precondition(format!(
                "execution {i}: expected forms for {m} clauses, got {}",
                approximations[i].len()
            )));
        }
        let z = next;
        next += 1;
        names.push(format!("z_{i}"));
        bounds.push((0.0, 1.0));
        let mut clauses = Vec::with_capacity(m);
        for j in 0..m {
            let forms = &approximations[i][j];
            if forms.is_empty() {
                return Err(Error::Precondition(format!(
                    "execution {i} clause {j} has no linear bound"
                )));
            }
            if forms.iter().any(|f| f.coeffs.len() != n0) {
                return Err(Error::dim(n0, forms[0].coeffs.len(), "milp form"));
            }
            let forms = prune_dominated(forms, x, eps);
            let lo = forms
                .iter()
                .map(|f| f.center_value(x) - eps * Norm::P(1.0).eval(f.coeffs.view()))
                .fold(f64::NEG_INFINITY, f64::max);
            let upper = forms
                .iter()
                .map(|f| f.center_value(x) + eps * Norm::P(1.0).eval(f.coeffs.view()))
                .fold(f64::NEG_INFINITY, f64::max)
                .max(0.0);
            let s = next;
            let o = next + 1;
            next += 2;
            names.push(format!("s_{i}_{j}"));
            names.push(format!("o_{i}_{j}"));
            bounds.push((0.0, 1.0));
            bounds.push((lo.min(upper), upper));
            clauses.push((s, o, upper, forms));
        }
        blocks.push(Block { exec: i, z, clauses });
    }

    let kind = instance.kind;
    let sense = match kind {
        PropertyKind::Kuap => Sense::Minimize,
        PropertyKind::Hamming => Sense::Maximize,
    };
    let mut lp = LinearProgram::new(next, sense);
    lp.bounds = bounds;
    let mut binaries_z = Vec::new();
    let mut binaries_s = Vec::new();
    let mut indicators = Vec::new();
    for block in &blocks {
        let x = instance.inputs[block.exec].view();
        lp.objective[block.z] = match kind {
            PropertyKind::Kuap => 1.0,
            PropertyKind::Hamming => -1.0,
        };
        binaries_z.push(block.z);
        indicators.push((block.exec, block.z));
        let mut cover = vec![0.0; next];
        cover[block.z] = 1.0;
        for (s, o, upper, forms) in &block.clauses {
            for f in forms {
                let mut row = vec![0.0; next];
                for (d, &c) in f.coeffs.iter().enumerate() {
                    row[d] = c;
                }
                row[*o] = -1.0;
                lp.add(row, Relation::Le, -f.center_value(x));
            }
            let mut row = vec![0.0; next];
            row[*o] = 1.0;
            row[*s] = *upper;
            lp.add(row, Relation::Le, *upper);
            cover[*s] = 1.0;
            binaries_s.push(*s);
        }
        lp.add(cover, Relation::Ge, 1.0);
    }
    let included_count = blocks.len() as f64;
    let constant = match kind {
        PropertyKind::Kuap => (instance.k() - blocks.len()) as f64,
        PropertyKind::Hamming => included_count,
    };
    binaries_z.extend(binaries_s);
    Ok(MilpModel {
        lp,
        binaries: binaries_z,
        indicators,
        n_delta: n0,
        constant,
        kind,
        names,
    })
}

fn fmt_term(f: &mut fmt::Formatter<'_>, coef: f64, name: &str) -> fmt::Result {
    if coef < 0.0 {
        write!(f, " - {} {}", -coef, name)
    } else {
        write!(f, " + {} {}", coef, name)
    }
}

/// LP-file-like dump, one constraint per line.
impl fmt::Display for MilpModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lp = &self.lp;
        writeln!(f, "\\ {} model, {} binaries", self.kind, self.binaries.len())?;
        writeln!(
            f,
            "{}",
            match lp.sense {
                Sense::Minimize => "minimize",
                Sense::Maximize => "maximize",
            }
        )?;
        write!(f, " obj:")?;
        for (j, &c) in lp.objective.iter().enumerate() {
            if c != 0.0 {
                fmt_term(f, c, &self.names[j])?;
            }
        }
        writeln!(f, " + {}", self.constant)?;
        writeln!(f, "subject to")?;
        for (r, con) in lp.constraints.iter().enumerate() {
            write!(f, " c{r}:")?;
            for (j, &c) in con.coeffs.iter().enumerate() {
                if c != 0.0 {
                    fmt_term(f, c, &self.names[j])?;
                }
            }
            writeln!(f, " {} {}", con.relation, con.rhs)?;
        }
        writeln!(f, "bounds")?;
        for (j, &(lo, hi)) in lp.bounds.iter().enumerate() {
            writeln!(f, " {} <= {} <= {}", lo, self.names[j], hi)?;
        }
        writeln!(f, "binaries")?;
        let bins: Vec<&str> = self.binaries.iter().map(|&b| self.names[b].as_str()).collect();
        writeln!(f, " {}", bins.join(" "))?;
        writeln!(f, "end")
    }
}
