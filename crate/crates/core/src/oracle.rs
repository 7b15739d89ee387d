//! Brute-force reference computations for tests.
//!
//! These deliberately avoid the bounding, refinement and branch-and-bound
//! code they are used to check: networks are evaluated by plain loops over
//! the weight matrices, and MILPs are solved by enumerating every binary
//! assignment.

use itertools::Itertools;

use crate::error::{Error, Result};
use crate::milp::{lp_solve, LinearProgram, LpOutcome, MilpModel, Relation, Sense};
use crate::model::{Layer, Network};
use crate::norm::Norm;
use crate::relspec::PropertyInstance;

const MAX_GRID_DIM: usize = 4;
const MAX_ENUM_BINARIES: usize = 12;

/// Regular grid over the `ε`-cube, restricted to the `‖·‖_p` ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub resolution: usize,
    pub norm: Norm,
    pub epsilon: f64,
}

impl GridSpec {
    pub fn new(resolution: usize, norm: Norm, epsilon: f64) -> Result<Self> {
        if resolution < 3 || resolution % 2 == 0 {
            return Err(Error::Precondition(format!(
                "grid resolution must be odd and at least 3, got {resolution}"
            )));
        }
        Ok(GridSpec {
            resolution,
            norm,
            epsilon,
        })
    }

    /// Per-coordinate values, symmetric around zero and containing `0` and `±ε`.
    pub fn ticks(&self) -> Vec<f64> {
        let half = (self.resolution / 2) as f64;
        (0..self.resolution)
            .map(|i| self.epsilon * (i as f64 - half) / half)
            .collect()
    }

    /// All grid points inside the ball, in lexicographic order.
    pub fn points(&self, dim: usize) -> Vec<Vec<f64>> {
        let ticks = self.ticks();
        (0..dim)
            .map(|_| ticks.iter().copied())
            .multi_cartesian_product()
            .filter(|p| self.inside(p))
            .collect()
    }

    fn inside(&self, p: &[f64]) -> bool {
        match self.norm {
            Norm::Inf => true,
            Norm::P(q) => {
                let s: f64 = p.iter().map(|v| v.abs().powf(q)).sum();
                s.powf(1.0 / q) <= self.epsilon * (1.0 + 1e-12)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub min_correct: usize,
    pub argmin: Vec<f64>,
    pub max_mismatches: usize,
}

/// Straight-line forward pass over nested `Vec`s.
pub fn eval_plain(net: &Network, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for layer in net.layers() {
        h = match layer {
            Layer::Affine { weight, bias } => {
                let mut out = vec![0.0; weight.nrows()];
                for (r, o) in out.iter_mut().enumerate() {
                    let mut acc = bias[r];
                    for (c, hv) in h.iter().enumerate() {
                        acc += weight[[r, c]] * hv;
                    }
                    *o = acc;
                }
                out
            }
            Layer::Relu => h.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
        };
    }
    h
}

fn correct(y: &[f64], label: usize) -> bool {
    y.iter().all(|&v| y[label] >= v)
}

/// Exact extrema of the number of correct executions over the grid. The grid
/// lies in the ball, so `min_correct` is at least the true worst case.
pub fn grid_attack(net: &Network, instance: &PropertyInstance, grid: &GridSpec) -> Result<GridResult> {
    let dim = instance.input_dim();
    if dim > MAX_GRID_DIM {
        return Err(Error::Precondition(format!(
            "grid attack supports at most {MAX_GRID_DIM} input dimensions, got {dim}"
        )));
    }
    let k = instance.k();
    let mut best: Option<(usize, Vec<f64>)> = None;
    for delta in grid.points(dim) {
        let mut count = 0;
        for (x, &label) in instance.inputs.iter().zip(&instance.labels) {
            let shifted: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + d).collect();
            if correct(&eval_plain(net, &shifted), label) {
                count += 1;
            }
        }
        if best.as_ref().map_or(true, |(b, _)| count < *b) {
            best = Some((count, delta));
        }
    }
    let (min_correct, argmin) = best.expect("grid contains the origin");
    Ok(GridResult {
        min_correct,
        argmin,
        max_mismatches: k - min_correct,
    })
}

/// Optimum of the model (property value, constant included) by solving the
/// LP for every assignment of the binaries.
pub fn enumerate_milp(model: &MilpModel) -> Result<f64> {
    let nb = model.binaries.len();
    if nb > MAX_ENUM_BINARIES {
        return Err(Error::Precondition(format!(
            "{nb} binaries exceed the enumeration limit of {MAX_ENUM_BINARIES}"
        )));
    }
    let mut best: Option<f64> = None;
    for mask in 0u32..(1u32 << nb) {
        let mut lp = model.lp.clone();
        for (b, &var) in model.binaries.iter().enumerate() {
            let v = f64::from((mask >> b) & 1);
            lp.bounds[var] = (v, v);
        }
        if let LpOutcome::Optimal { value, .. } = lp_solve(&lp)? {
            best = Some(match (best, model.sense()) {
                (None, _) => value,
                (Some(b), Sense::Minimize) => b.min(value),
                (Some(b), Sense::Maximize) => b.max(value),
            });
        }
    }
    best.map(|v| v + model.constant)
        .ok_or_else(|| Error::Solver("no feasible binary assignment".into()))
}

/// Central differences `(f(p + h e_i) − f(p − h e_i)) / 2h`.
pub fn finite_diff(f: impl Fn(&[f64]) -> f64, point: &[f64], h: f64) -> Vec<f64> {
    let mut p = point.to_vec();
    (0..point.len())
        .map(|i| {
            p[i] = point[i] + h;
            let up = f(&p);
            p[i] = point[i] - h;
            let down = f(&p);
            p[i] = point[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Optimum of a bounded LP by enumerating basic points: every choice of
/// `n` tight rows (constraints or finite bounds) solved by Gaussian
/// elimination. `None` when infeasible. Variables must have finite bounds.
pub fn lp_vertex_enumeration(lp: &LinearProgram) -> Result<Option<f64>> {
    let n = lp.num_vars();
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for c in &lp.constraints {
        rows.push((c.coeffs.clone(), c.rhs));
    }
    for (j, &(lo, hi)) in lp.bounds.iter().enumerate() {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Precondition(format!("variable {j} is unbounded")));
        }
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        rows.push((e.clone(), lo));
        rows.push((e, hi));
    }
    let feasible = |x: &[f64]| {
        let tol = 1e-7;
        lp.bounds
            .iter()
            .zip(x)
            .all(|(&(lo, hi), &v)| v >= lo - tol && v <= hi + tol)
            && lp.constraints.iter().all(|c| {
                let lhs: f64 = c.coeffs.iter().zip(x).map(|(a, b)| a * b).sum();
                match c.relation {
                    Relation::Le => lhs <= c.rhs + tol,
                    Relation::Ge => lhs >= c.rhs - tol,
                    Relation::Eq => (lhs - c.rhs).abs() <= tol,
                }
            })
    };
    let mut best: Option<f64> = None;
    for chosen in (0..rows.len()).combinations(n) {
        let a: Vec<Vec<f64>> = chosen.iter().map(|&r| rows[r].0.clone()).collect();
        let b: Vec<f64> = chosen.iter().map(|&r| rows[r].1).collect();
        let Some(x) = solve_square(a, b) else { continue };
        if !feasible(&x) {
            continue;
        }
        let v: f64 = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        best = Some(match (best, lp.sense) {
            (None, _) => v,
            (Some(b), Sense::Minimize) => b.min(v),
            (Some(b), Sense::Maximize) => b.max(v),
        });
    }
    Ok(best)
}

fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..n {
                        a[r][c] -= f * a[col][c];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn grid_contains_origin_and_corners() {
        let g = GridSpec::new(5, Norm::Inf, 0.2).unwrap();
        let pts = g.points(2);
        assert_eq!(pts.len(), 25);
        assert!(pts.contains(&vec![0.0, 0.0]));
        assert!(pts.contains(&vec![-0.2, 0.2]));
        let l2 = GridSpec::new(5, Norm::P(2.0), 0.2).unwrap().points(2);
        assert!(l2.len() < 25 && !l2.contains(&vec![0.2, 0.2]));
        assert!(GridSpec::new(4, Norm::Inf, 0.1).is_err());
    }

    #[test]
    fn finite_diff_quadratic() {
        let g = finite_diff(|p| 3.0 * p[0] * p[0] - p[1], &[0.5, 2.0], 1e-4);
        assert!((g[0] - 3.0).abs() < 1e-8);
        assert!((g[1] + 1.0).abs() < 1e-10);
    }

    #[test]
    fn vertex_enumeration_small() {
        let mut lp = LinearProgram::new(2, Sense::Maximize);
        lp.objective = vec![1.0, 1.0];
        lp.bounds = vec![(0.0, 3.0), (0.0, 3.0)];
        lp.add(vec![1.0, 2.0], Relation::Le, 4.0);
        assert_eq!(lp_vertex_enumeration(&lp).unwrap(), Some(3.5));
    }

    #[test]
    fn plain_eval_matches_forward() {
        let net = Network::new(
            2,
            vec![
                Layer::affine(array![[1.0, -1.0], [0.5, 2.0]], array![0.1, -0.3]).unwrap(),
                Layer::Relu,
                Layer::affine(array![[1.0, 1.0]], array![0.0]).unwrap(),
            ],
        )
        .unwrap();
        let x = [0.3, -0.2];
        let y = net.forward(array![0.3, -0.2].view()).unwrap();
        for (a, b) in eval_plain(&net, &x).iter().zip(y.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
