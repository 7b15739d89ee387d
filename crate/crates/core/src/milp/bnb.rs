//! Best-first branch-and-bound over the model's binaries.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::lp::{lp_solve, LpOutcome, Sense};
use super::MilpModel;
use crate::error::{Error, Result};

const INT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct MilpSolution {
    /// Property value at the optimum (integral).
    pub objective: f64,
    pub witness_delta: Vec<f64>,
    pub nodes: usize,
}

struct Node {
    /// Lower bound in minimization space (LP objective of the parent).
    bound: f64,
    seq: usize,
    fixed: Vec<Option<bool>>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // max-heap: smaller bound first, then older node
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

fn solve_fixed(model: &MilpModel, fixed: &[Option<bool>]) -> Result<LpOutcome> {
    let mut lp = model.lp.clone();
    for (&var, f) in model.binaries.iter().zip(fixed) {
        if let Some(v) = f {
            let v = if *v { 1.0 } else { 0.0 };
            lp.bounds[var] = (v, v);
        }
    }
    lp_solve(&lp)
}

/// Exact optimum of the model. Branches on the lowest-index fractional binary
/// (indicators come first), exploring the 0-branch first when minimizing and
/// the 1-branch first when maximizing.
pub fn milp_solve(model: &MilpModel) -> Result<MilpSolution> {
    // work in minimization space
    let dir = match model.sense() {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let nb = model.binaries.len();
    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        seq,
        fixed: vec![None; nb],
    });
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut nodes = 0;

    while let Some(node) = heap.pop() {
        if let Some((best, _)) = &incumbent {
            if node.bound.is_finite() && (node.bound - INT_TOL).ceil() >= *best {
                continue;
            }
        }
        nodes += 1;
        let (value, x) = match solve_fixed(model, &node.fixed)? {
            LpOutcome::Optimal { value, x } => (dir * value, x),
            LpOutcome::Infeasible => continue,
            LpOutcome::Unbounded => {
                return Err(Error::Solver("unbounded MILP relaxation".into()));
            }
        };
        // objective coefficients on binaries are ±1, so optima are integral
        let lower = (value - INT_TOL).ceil();
        if let Some((best, _)) = &incumbent {
            if lower >= *best {
                continue;
            }
        }
        let branch_on = model
            .binaries
            .iter()
            .enumerate()
            .find(|&(b, &var)| {
                node.fixed[b].is_none() && {
                    let v = x[var];
                    v > INT_TOL && v < 1.0 - INT_TOL
                }
            })
            .map(|(b, _)| b);

        let branch_on = match branch_on {
            Some(b) => b,
            None => {
                // near-integral: confirm with every binary fixed to its rounding
                let rounded: Vec<Option<bool>> = model
                    .binaries
                    .iter()
                    .enumerate()
                    .map(|(b, &var)| Some(node.fixed[b].unwrap_or(x[var] > 0.5)))
                    .collect();
                if let LpOutcome::Optimal { value, x } = solve_fixed(model, &rounded)? {
                    let v = (dir * value).round();
                    if incumbent.as_ref().map_or(true, |(best, _)| v < *best) {
                        incumbent = Some((v, x));
                    }
                    continue;
                }
                match node.fixed.iter().position(Option::is_none) {
                    Some(b) => b,
                    None => continue,
                }
            }
        };

        let order = match model.sense() {
            Sense::Minimize => [false, true],
            Sense::Maximize => [true, false],
        };
        for v in order {
            let mut fixed = node.fixed.clone();
            fixed[branch_on] = Some(v);
            seq += 1;
            heap.push(Node {
                bound: value,
                seq,
                fixed,
            });
        }
    }

    let (best, x) =
        incumbent.ok_or_else(|| Error::Solver("MILP has no feasible assignment".into()))?;
    Ok(MilpSolution {
        objective: dir * best + model.constant,
        witness_delta: x[..model.n_delta].to_vec(),
        nodes,
    })
}
