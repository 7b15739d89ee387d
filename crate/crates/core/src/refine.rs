//! Cross-executional refinement of ReLU slopes.
//!
//! For executions `1..n` with linear bounds `L_iᵀ(x_i + δ) + b_i` on their
//! targeted clauses, a common violating `δ` exists only if the shared LP
//! `min t s.t. L_iᵀ(x_i + δ) + b_i ≤ t` has a negative optimum. Its dual,
//! for multipliers `λ` on the probability simplex, has the closed form
//!
//! ```text
//! G(α, λ) = Σ_i λ_i (L_iᵀx_i + b_i) − ε ‖Σ_i λ_i L_i‖_q
//! ```
//!
//! which is maximized jointly over every execution's slopes `α_i` and `λ`
//! with projected Adam. Any evaluated point is a sound lower bound, so the
//! returned bound is the best of all iterates and of the one-hot multipliers
//! with individually refined slopes.

use std::collections::BTreeMap;

use itertools::Itertools;
use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::crown::{
    backward_linear_bound, backward_vjp, concretize, preactivation_bounds_with, AlphaVector,
    BoundMode, BoundsCache, LinearForm,
};
use crate::error::{Error, Result};
use crate::milp::{build_lp_pairwise, lp_solve, LpOutcome};
use crate::model::Network;
use crate::norm::Norm;
use crate::relspec::PropertyInstance;

/// Clause tuples checked exactly before falling back to the per-execution bound.
const MAX_CLAUSE_TUPLES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub adam_iters: usize,
    pub lr_alpha: f64,
    pub lr_lambda: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            adam_iters: 20,
            lr_alpha: 0.1,
            lr_lambda: 0.1,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

/// Non-relational bounds of one execution: intermediate bounds, the
/// non-parametric slopes and one linear form per clause.
#[derive(Debug, Clone)]
pub struct Execution {
    pub index: usize,
    pub cache: BoundsCache,
    pub heuristic_alpha: AlphaVector,
    pub forms: Vec<LinearForm>,
    pub clause_bounds: Vec<f64>,
}

impl Execution {
    pub fn analyze(
        net: &Network,
        instance: &PropertyInstance,
        index: usize,
        mode: BoundMode,
    ) -> Result<Self> {
        let run = || -> Result<Execution> {
            let x = instance.inputs[index].view();
            let cache =
                preactivation_bounds_with(net, x, instance.epsilon, instance.norm, mode)?;
            let heuristic_alpha = AlphaVector::heuristic(&cache);
            let mut forms = Vec::new();
            let mut clause_bounds = Vec::new();
            for c in instance.clauses[index].rows() {
                let form = backward_linear_bound(net, &cache, c.view(), &heuristic_alpha)?;
                clause_bounds.push(concretize(&form, x, instance.epsilon, instance.norm)?);
                forms.push(form);
            }
            Ok(Execution {
                index,
                cache,
                heuristic_alpha,
                forms,
                clause_bounds,
            })
        };
        run().map_err(|e| e.in_execution(index))
    }

    /// Largest guaranteed margin `s_i = min_j` of the concretized clause bounds.
    pub fn score(&self) -> f64 {
        self.clause_bounds.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn verified(&self) -> bool {
        self.score() >= 0.0
    }
}

/// Slopes per subset member plus simplex multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPoint {
    pub alphas: Vec<AlphaVector>,
    pub lambdas: Array1<f64>,
}

impl DualPoint {
    pub fn is_feasible(&self) -> bool {
        let sum: f64 = self.lambdas.sum();
        (sum - 1.0).abs() <= 1e-9
            && self.lambdas.iter().all(|&l| (0.0..=1.0).contains(&l))
            && self
                .alphas
                .iter()
                .all(|a| a.0.iter().all(|l| l.iter().all(|&v| (0.0..=1.0).contains(&v))))
    }
}

#[derive(Debug, Clone)]
pub struct RefinementResult {
    pub subset: Vec<usize>,
    /// Targeted clause per member.
    pub clause_targets: Vec<usize>,
    /// `G` at [`Self::point`] for the targeted clauses.
    pub bound: f64,
    pub point: DualPoint,
    /// Forms for every clause of every member, built with the member's slopes.
    pub forms: Vec<Vec<LinearForm>>,
    /// Lower bound on `min_δ max_i min_j` over the forms; non-negative iff the
    /// subset has no common violating perturbation under these forms.
    pub certified: f64,
    pub verified: bool,
}

fn check_aligned(lambdas: usize, forms: usize, centers: usize) -> Result<()> {
    if forms == 0 {
        return Err(Error::Precondition("empty subset".into()));
    }
    if lambdas != forms || centers != forms {
        return Err(Error::Precondition(format!(
            "misaligned subset: {lambdas} multipliers, {forms} forms, {centers} centers"
        )));
    }
    Ok(())
}

/// `Σ λ_i a_i − ε‖Σ λ_i L_i‖_q` with `a_i = L_iᵀx_i + b_i`.
pub fn g_closed_form(
    lambdas: ArrayView1<f64>,
    forms: &[LinearForm],
    centers: &[ArrayView1<f64>],
    epsilon: f64,
    norm: Norm,
) -> Result<f64> {
    check_aligned(lambdas.len(), forms.len(), centers.len())?;
    let n0 = forms[0].coeffs.len();
    let mut combined = Array1::<f64>::zeros(n0);
    let mut value = 0.0;
    for ((form, x), &l) in forms.iter().zip(centers).zip(lambdas.iter()) {
        if form.coeffs.len() != n0 || x.len() != n0 {
            return Err(Error::dim(n0, form.coeffs.len().max(x.len()), "subset forms"));
        }
        value += l * form.center_value(*x);
        combined.scaled_add(l, &form.coeffs);
    }
    Ok(value - epsilon * norm.dual().eval(combined.view()))
}

/// Value and gradient of `G` with respect to `λ` and each form's coefficients
/// (the offset gradient of form `i` is `λ_i`).
pub struct GGradient {
    pub value: f64,
    pub d_lambda: Array1<f64>,
    pub d_coeffs: Vec<Array1<f64>>,
}

pub fn g_closed_form_grad(
    lambdas: ArrayView1<f64>,
    forms: &[LinearForm],
    centers: &[ArrayView1<f64>],
    epsilon: f64,
    norm: Norm,
) -> Result<GGradient> {
    let value = g_closed_form(lambdas, forms, centers, epsilon, norm)?;
    let n0 = forms[0].coeffs.len();
    let mut combined = Array1::<f64>::zeros(n0);
    for (form, &l) in forms.iter().zip(lambdas.iter()) {
        combined.scaled_add(l, &form.coeffs);
    }
    let sub = norm.dual().subgradient(combined.view());
    let d_lambda = forms
        .iter()
        .zip(centers)
        .map(|(f, x)| f.center_value(*x) - epsilon * sub.dot(&f.coeffs))
        .collect();
    let d_coeffs = centers
        .iter()
        .zip(lambdas.iter())
        .map(|(x, &l)| l * (x - &(epsilon * &sub)))
        .collect();
    Ok(GGradient {
        value,
        d_lambda,
        d_coeffs,
    })
}

/// Best individually concretized bound, `max_i min_δ L_iᵀ(x_i + δ) + b_i`.
pub fn g_naive(
    forms: &[LinearForm],
    centers: &[ArrayView1<f64>],
    epsilon: f64,
    norm: Norm,
) -> Result<f64> {
    check_aligned(forms.len(), forms.len(), centers.len())?;
    let mut best = f64::NEG_INFINITY;
    for (f, x) in forms.iter().zip(centers) {
        best = best.max(concretize(f, *x, epsilon, norm)?);
    }
    Ok(best)
}

/// Euclidean projection onto the probability simplex (sort and threshold).
pub fn project_simplex(v: ArrayView1<f64>) -> Array1<f64> {
    let n = v.len();
    if n == 0 {
        return Array1::zeros(0);
    }
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (i as f64 + 1.0);
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.mapv(|x| (x - theta).max(0.0))
}

/// Per member, the clause with the lowest non-parametric bound (lowest index on ties).
pub fn select_clause_targets(executions: &[Execution], subset: &[usize]) -> Vec<usize> {
    subset
        .iter()
        .map(|&i| {
            let bounds = &executions[i].clause_bounds;
            let mut best = 0;
            for (j, &b) in bounds.iter().enumerate() {
                if b < bounds[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Takes the `k0` unverified executions with the largest scores and emits all
/// non-empty subsets of size at most `k1`, by size and then lexicographically.
pub fn schedule_subsets(scores: &[(usize, f64)], k0: usize, k1: usize) -> Result<Vec<Vec<usize>>> {
    if k0 == 0 || k1 == 0 {
        return Err(Error::Precondition(format!("k0={k0} and k1={k1} must be positive")));
    }
    let mut ranked: Vec<(usize, f64)> = scores.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut pool: Vec<usize> = ranked.iter().take(k0).map(|&(i, _)| i).collect();
    pool.sort_unstable();
    let mut subsets = Vec::new();
    for size in 1..=k1.min(pool.len()) {
        subsets.extend(pool.iter().copied().combinations(size));
    }
    Ok(subsets)
}

/// Sound k-UAP count from subsets proved free of a common violation: no set
/// of simultaneously misclassified executions can contain a proved subset.
pub fn count_bound_from_proofs(
    verified_count: usize,
    unverified: &[usize],
    safe_subsets: &[Vec<usize>],
) -> Result<usize> {
    let mut members: Vec<usize> = Vec::new();
    for s in safe_subsets {
        if s.is_empty() {
            return Err(Error::Precondition("empty safe subset".into()));
        }
        for i in s {
            if !unverified.contains(i) {
                return Err(Error::Precondition(format!(
                    "safe subset member {i} is not an unverified execution"
                )));
            }
            members.push(*i);
        }
    }
    members.sort_unstable();
    members.dedup();
    if members.len() > 24 {
        return Err(Error::Precondition(format!(
            "{} executions in proved subsets exceed the exhaustive search limit",
            members.len()
        )));
    }
    let masks: Vec<u32> = safe_subsets
        .iter()
        .map(|s| {
            s.iter()
                .map(|i| 1u32 << members.binary_search(i).expect("member"))
                .fold(0, |a, b| a | b)
        })
        .collect();
    let mut largest = 0;
    for set in 0u32..(1u32 << members.len()) {
        if masks.iter().all(|&m| set & m != m) {
            largest = largest.max(set.count_ones() as usize);
        }
    }
    let misclassified = unverified.len() - members.len() + largest;
    Ok(verified_count + unverified.len() - misclassified)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
}

impl Adam {
    const EPS: f64 = 1e-8;

    fn new(len: usize, lr: f64, cfg: &RefineConfig) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
        }
    }

    /// One ascent step.
    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            params[k] += self.lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

/// Refinement over subsets of one property instance.
pub struct Refiner<'a> {
    pub net: &'a Network,
    pub instance: &'a PropertyInstance,
    pub executions: &'a [Execution],
    pub config: RefineConfig,
}

struct Evaluation {
    value: f64,
    d_alpha: Vec<Vec<f64>>,
    d_lambda: Array1<f64>,
}

impl<'a> Refiner<'a> {
    pub fn new(
        net: &'a Network,
        instance: &'a PropertyInstance,
        executions: &'a [Execution],
        config: RefineConfig,
    ) -> Self {
        Refiner {
            net,
            instance,
            executions,
            config,
        }
    }

    fn centers(&self, subset: &[usize]) -> Vec<ArrayView1<'_, f64>> {
        subset.iter().map(|&i| self.instance.inputs[i].view()).collect()
    }

    fn targeted_forms(
        &self,
        subset: &[usize],
        targets: &[usize],
        alphas: &[AlphaVector],
    ) -> Result<Vec<LinearForm>> {
        subset
            .iter()
            .zip(targets)
            .zip(alphas)
            .map(|((&i, &j), a)| {
                let c = self.instance.clauses[i].row(j);
                backward_linear_bound(self.net, &self.executions[i].cache, c.view(), a)
            })
            .collect()
    }

    fn g_value(
        &self,
        subset: &[usize],
        targets: &[usize],
        alphas: &[AlphaVector],
        lambdas: ArrayView1<f64>,
    ) -> Result<f64> {
        let forms = self.targeted_forms(subset, targets, alphas)?;
        g_closed_form(
            lambdas,
            &forms,
            &self.centers(subset),
            self.instance.epsilon,
            self.instance.norm,
        )
    }

    fn evaluate(
        &self,
        subset: &[usize],
        targets: &[usize],
        alphas: &[AlphaVector],
        lambdas: ArrayView1<f64>,
    ) -> Result<Evaluation> {
        let forms = self.targeted_forms(subset, targets, alphas)?;
        let centers = self.centers(subset);
        let grad = g_closed_form_grad(
            lambdas,
            &forms,
            &centers,
            self.instance.epsilon,
            self.instance.norm,
        )?;
        let mut d_alpha = Vec::with_capacity(subset.len());
        for (pos, (&i, &j)) in subset.iter().zip(targets).enumerate() {
            let c = self.instance.clauses[i].row(j);
            let (_, g) = backward_vjp(
                self.net,
                &self.executions[i].cache,
                c.view(),
                &alphas[pos],
                grad.d_coeffs[pos].view(),
                lambdas[pos],
            )?;
            d_alpha.push(g.to_flat());
        }
        Ok(Evaluation {
            value: grad.value,
            d_alpha,
            d_lambda: grad.d_lambda,
        })
    }

    /// Refinement of a single execution; identical to a one-member subset.
    pub fn refine_individual(&self, index: usize) -> Result<RefinementResult> {
        self.refine_cross(&[index], None)
    }

    /// Jointly refines the slopes of `subset` (sorted execution indices).
    /// `individual` supplies one-member results for the one-hot candidates;
    /// missing entries are computed on demand.
    pub fn refine_cross(
        &self,
        subset: &[usize],
        individual: Option<&BTreeMap<usize, RefinementResult>>,
    ) -> Result<RefinementResult> {
        if subset.is_empty() {
            return Err(Error::Precondition("empty subset".into()));
        }
        for &i in subset {
            let exec = self
                .executions
                .get(i)
                .ok_or_else(|| Error::Precondition(format!("execution {i} out of range")))?;
            if exec.verified() {
                return Err(Error::Precondition(format!(
                    "execution {i} is already verified individually"
                )));
            }
        }
        let n = subset.len();
        let targets = select_clause_targets(self.executions, subset);
        let mut alphas: Vec<AlphaVector> = subset
            .iter()
            .map(|&i| self.executions[i].heuristic_alpha.clone())
            .collect();
        let mut lambdas = Array1::from_elem(n, 1.0 / n as f64);

        let mut alpha_opt: Vec<Adam> = alphas
            .iter()
            .map(|a| Adam::new(a.len(), self.config.lr_alpha, &self.config))
            .collect();
        let mut lambda_opt = Adam::new(n, self.config.lr_lambda, &self.config);

        let mut best = (f64::NEG_INFINITY, alphas.clone(), lambdas.clone());
        for it in 0..=self.config.adam_iters {
            let eval = self.evaluate(subset, &targets, &alphas, lambdas.view())?;
            if eval.value > best.0 {
                best = (eval.value, alphas.clone(), lambdas.clone());
            }
            if it == self.config.adam_iters {
                break;
            }
            for ((alpha, opt), grad) in alphas.iter_mut().zip(&mut alpha_opt).zip(&eval.d_alpha) {
                let mut flat = alpha.to_flat();
                opt.step(&mut flat, grad);
                alpha.set_flat(&flat);
                alpha.clip();
            }
            if n > 1 {
                let mut flat = lambdas.to_vec();
                lambda_opt.step(&mut flat, eval.d_lambda.as_slice().expect("contiguous"));
                lambdas = project_simplex(Array1::from(flat).view());
            }
        }

        if n > 1 {
            let computed;
            let individual = match individual {
                Some(map) if subset.iter().all(|i| map.contains_key(i)) => map,
                _ => {
                    let mut map = BTreeMap::new();
                    for &i in subset {
                        map.insert(i, self.refine_individual(i)?);
                    }
                    computed = map;
                    &computed
                }
            };
            let cross_alphas = best.1.clone();
            for (pos, &i) in subset.iter().enumerate() {
                let mut one_hot = Array1::zeros(n);
                one_hot[pos] = 1.0;
                let mut with_indiv = cross_alphas.clone();
                with_indiv[pos] = individual[&i].point.alphas[0].clone();
                for cand in [with_indiv, cross_alphas.clone()] {
                    let v = self.g_value(subset, &targets, &cand, one_hot.view())?;
                    if v > best.0 {
                        best = (v, cand, one_hot.clone());
                    }
                }
            }
        }

        let (bound, alphas, lambdas) = best;
        let forms: Vec<Vec<LinearForm>> = subset
            .iter()
            .zip(&alphas)
            .map(|(&i, a)| {
                self.instance.clauses[i]
                    .rows()
                    .iter()
                    .map(|c| {
                        backward_linear_bound(self.net, &self.executions[i].cache, c.view(), a)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let certified = self.certify(subset, &forms, lambdas.view())?;
        Ok(RefinementResult {
            subset: subset.to_vec(),
            clause_targets: targets,
            bound,
            point: DualPoint { alphas, lambdas },
            forms,
            certified,
            verified: certified >= 0.0,
        })
    }

    /// Lower bound on `min_δ max_i min_j form_{i,j}(δ)`: the minimum over
    /// clause tuples of the exact shared LP (inf norm) or of the dual bound at
    /// a few multipliers (other norms).
    fn certify(
        &self,
        subset: &[usize],
        forms: &[Vec<LinearForm>],
        lambdas: ArrayView1<f64>,
    ) -> Result<f64> {
        let eps = self.instance.epsilon;
        let norm = self.instance.norm;
        let centers = self.centers(subset);
        let per_exec: Vec<f64> = forms
            .iter()
            .zip(&centers)
            .map(|(fs, x)| {
                fs.iter()
                    .map(|f| concretize(f, *x, eps, norm))
                    .try_fold(f64::INFINITY, |m, v| v.map(|v| m.min(v)))
            })
            .collect::<Result<_>>()?;
        let fallback = per_exec.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let n = subset.len();
        if n == 1 {
            return Ok(fallback);
        }
        let tuples = forms
            .iter()
            .try_fold(1usize, |acc, fs| acc.checked_mul(fs.len()))
            .unwrap_or(usize::MAX);
        if tuples > MAX_CLAUSE_TUPLES {
            return Ok(fallback);
        }
        let mut multipliers = vec![lambdas.to_owned(), Array1::from_elem(n, 1.0 / n as f64)];
        for pos in 0..n {
            let mut e = Array1::zeros(n);
            e[pos] = 1.0;
            multipliers.push(e);
        }
        let mut worst = f64::INFINITY;
        for tuple in forms.iter().map(|fs| 0..fs.len()).multi_cartesian_product() {
            let chosen: Vec<LinearForm> = tuple
                .iter()
                .zip(forms)
                .map(|(&j, fs)| fs[j].clone())
                .collect();
            let value = if norm.is_inf() {
                let lp = build_lp_pairwise(&chosen, &centers, eps, norm)?;
                match lp_solve(&lp)? {
                    LpOutcome::Optimal { value, .. } => value,
                    other => {
                        return Err(Error::Solver(format!("shared LP not optimal: {other:?}")))
                    }
                }
            } else {
                let mut v = f64::NEG_INFINITY;
                for l in &multipliers {
                    v = v.max(g_closed_form(l.view(), &chosen, &centers, eps, norm)?);
                }
                v
            };
            worst = worst.min(value);
        }
        Ok(worst.max(fallback))
    }
}
