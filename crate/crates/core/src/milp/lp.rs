//! Dense two-phase primal simplex with Bland's anti-cycling rule.
//!
//! Variables with arbitrary bounds are shifted or split into non-negative
//! columns; finite upper bounds become explicit rows.

use std::fmt;

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-10;
const OPT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "=",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub sense: Sense,
    pub constraints: Vec<Constraint>,
    /// Per-variable `[lo, hi]`; infinities allowed.
    pub bounds: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, x: Vec<f64> },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            LpOutcome::Optimal { value, .. } => Some(*value),
            _ => None,
        }
    }
}

impl LinearProgram {
    pub fn new(num_vars: usize, sense: Sense) -> Self {
        LinearProgram {
            objective: vec![0.0; num_vars],
            sense,
            constraints: Vec::new(),
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); num_vars],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.bounds.len() != n {
            return Err(Error::dim(n, self.bounds.len(), "lp bounds"));
        }
        for c in &self.constraints {
            if c.coeffs.len() != n {
                return Err(Error::dim(n, c.coeffs.len(), "lp constraint row"));
            }
            if !c.rhs.is_finite() || c.coeffs.iter().any(|v| !v.is_finite()) {
                return Err(Error::Solver("non-finite constraint data".into()));
            }
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("non-finite objective".into()));
        }
        for &(lo, hi) in &self.bounds {
            if lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(Error::Solver(format!("invalid bounds [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// How an original variable is expressed in non-negative columns.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// x = shift + y
    Shift(f64, usize),
    /// x = shift - y
    Mirror(f64, usize),
    /// x = y⁺ - y⁻
    Split(usize, usize),
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    /// Right-hand side per row.
    rhs: Vec<f64>,
    basis: Vec<usize>,
    ncols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize, cost: &mut [f64], cost_val: &mut f64) {
        let p = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        self.rhs[r] /= p;
        let pivot_row = self.rows[r].clone();
        let pivot_rhs = self.rhs[r];
        for i in 0..self.rows.len() {
            if i == r {
                continue;
            }
            let f = self.rows[i][c];
            if f != 0.0 {
                for (v, pv) in self.rows[i].iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                self.rows[i][c] = 0.0;
                self.rhs[i] -= f * pivot_rhs;
                if self.rhs[i] < 0.0 && self.rhs[i] > -FEAS_TOL {
                    self.rhs[i] = 0.0;
                }
            }
        }
        let f = cost[c];
        if f != 0.0 {
            for (v, pv) in cost.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            cost[c] = 0.0;
            *cost_val -= f * pivot_rhs;
        }
        self.basis[r] = c;
    }

    /// Minimizes with reduced costs `cost` over allowed columns. Returns false
    /// if unbounded.
    fn optimize(&mut self, cost: &mut [f64], cost_val: &mut f64, allowed: usize) -> bool {
        loop {
            let entering = (0..allowed).find(|&j| cost[j] < -OPT_TOL);
            let Some(c) = entering else {
                return true;
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][c];
                if a > PIVOT_TOL {
                    let ratio = self.rhs[i] / a;
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-12
                                || (ratio <= lr + 1e-12 && self.basis[i] < self.basis[li])
                            {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            match leave {
                None => return false,
                Some((r, _)) => self.pivot(r, c, cost, cost_val),
            }
        }
    }
}

/// Solves the program exactly up to floating tolerances.
pub fn lp_solve(lp: &LinearProgram) -> Result<LpOutcome> {
    lp.validate()?;
    let n = lp.num_vars();

    let mut maps = Vec::with_capacity(n);
    let mut ny = 0;
    // rows over y-columns: (coeffs, relation, rhs)
    let mut rows: Vec<(Vec<(usize, f64)>, Relation, f64)> = Vec::new();
    for &(lo, hi) in &lp.bounds {
        if lo.is_finite() {
            if hi.is_finite() && hi < lo {
                return Ok(LpOutcome::Infeasible);
            }
            maps.push(VarMap::Shift(lo, ny));
            if hi.is_finite() {
                rows.push((vec![(ny, 1.0)], Relation::Le, hi - lo));
            }
            ny += 1;
        } else if hi.is_finite() {
            maps.push(VarMap::Mirror(hi, ny));
            ny += 1;
        } else {
            maps.push(VarMap::Split(ny, ny + 1));
            ny += 2;
        }
    }
    for con in &lp.constraints {
        let mut terms = Vec::new();
        let mut rhs = con.rhs;
        for (j, &a) in con.coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            match maps[j] {
                VarMap::Shift(s, y) => {
                    rhs -= a * s;
                    terms.push((y, a));
                }
                VarMap::Mirror(s, y) => {
                    rhs -= a * s;
                    terms.push((y, -a));
                }
                VarMap::Split(p, m) => {
                    terms.push((p, a));
                    terms.push((m, -a));
                }
            }
        }
        rows.push((terms, con.relation, rhs));
    }

    // objective over y (minimization)
    let sign = match lp.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let mut cost_y = vec![0.0; ny];
    for (j, &cj) in lp.objective.iter().enumerate() {
        let cj = sign * cj;
        match maps[j] {
            VarMap::Shift(_, y) => cost_y[y] += cj,
            VarMap::Mirror(_, y) => cost_y[y] -= cj,
            VarMap::Split(p, m) => {
                cost_y[p] += cj;
                cost_y[m] -= cj;
            }
        }
    }

    // normalize rhs >= 0 and count auxiliary columns
    for row in rows.iter_mut() {
        if row.2 < 0.0 {
            for t in row.0.iter_mut() {
                t.1 = -t.1;
            }
            row.2 = -row.2;
            row.1 = match row.1 {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }
    let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
    let ncols = ny + n_slack + n_art;
    let art_start = ny + n_slack;

    let m = rows.len();
    let mut tab = Tableau {
        rows: vec![vec![0.0; ncols]; m],
        rhs: vec![0.0; m],
        basis: vec![0; m],
        ncols,
    };
    let mut next_slack = ny;
    let mut next_art = art_start;
    for (i, (terms, rel, rhs)) in rows.iter().enumerate() {
        for &(j, a) in terms {
            tab.rows[i][j] += a;
        }
        tab.rhs[i] = *rhs;
        match rel {
            Relation::Le => {
                tab.rows[i][next_slack] = 1.0;
                tab.basis[i] = next_slack;
                next_slack += 1;
            }
            Relation::Ge => {
                tab.rows[i][next_slack] = -1.0;
                next_slack += 1;
                tab.rows[i][next_art] = 1.0;
                tab.basis[i] = next_art;
                next_art += 1;
            }
            Relation::Eq => {
                tab.rows[i][next_art] = 1.0;
                tab.basis[i] = next_art;
                next_art += 1;
            }
        }
    }

    // phase 1
    if n_art > 0 {
        let mut cost = vec![0.0; ncols];
        let mut val = 0.0;
        for j in art_start..ncols {
            cost[j] = 1.0;
        }
        for i in 0..m {
            if tab.basis[i] >= art_start {
                for j in 0..ncols {
                    cost[j] -= tab.rows[i][j];
                }
                val -= tab.rhs[i];
            }
        }
        tab.optimize(&mut cost, &mut val, ncols);
        let scale = 1.0 + tab.rhs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if -val > FEAS_TOL * scale {
            return Ok(LpOutcome::Infeasible);
        }
        // drive remaining artificials out of the basis
        let mut i = 0;
        while i < tab.rows.len() {
            if tab.basis[i] >= art_start {
                let col = (0..art_start).find(|&j| tab.rows[i][j].abs() > 1e-9);
                match col {
                    Some(c) => {
                        tab.pivot(i, c, &mut cost, &mut val);
                        i += 1;
                    }
                    None => {
                        tab.rows.remove(i);
                        tab.rhs.remove(i);
                        tab.basis.remove(i);
                    }
                }
            } else {
                i += 1;
            }
        }
    }

    // phase 2
    let mut cost = vec![0.0; tab.ncols];
    cost[..ny].copy_from_slice(&cost_y);
    let mut val = 0.0;
    for i in 0..tab.rows.len() {
        let cb = cost_y.get(tab.basis[i]).copied().unwrap_or(0.0);
        if cb != 0.0 {
            for j in 0..tab.ncols {
                cost[j] -= cb * tab.rows[i][j];
            }
            val -= cb * tab.rhs[i];
        }
    }
    for j in art_start..tab.ncols {
        cost[j] = 0.0;
    }
    if !tab.optimize(&mut cost, &mut val, art_start) {
        return Ok(LpOutcome::Unbounded);
    }

    let mut y = vec![0.0; ny];
    for (i, &b) in tab.basis.iter().enumerate() {
        if b < ny {
            y[b] = tab.rhs[i];
        }
    }
    let x: Vec<f64> = maps
        .iter()
        .map(|m| match *m {
            VarMap::Shift(s, j) => s + y[j],
            VarMap::Mirror(s, j) => s - y[j],
            VarMap::Split(p, q) => y[p] - y[q],
        })
        .collect();
    let value = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpOutcome::Optimal { value, x })
}
