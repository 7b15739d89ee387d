//! End-to-end verification of one property instance.
//!
//! Stages are computed lazily and shared between methods: non-relational
//! bounds for every execution, individual slope refinement of the executions
//! those bounds leave open, cross-executional refinement over the scheduled
//! subsets, and finally the MILP over whichever linear bounds a method may use.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crown::{BoundMode, LinearForm};
use crate::error::{Error, Result};
use crate::milp::{build_milp, milp_solve, Approximations};
use crate::model::Network;
use crate::refine::{
    count_bound_from_proofs, schedule_subsets, Execution, RefineConfig, RefinementResult,
    Refiner,
};
use crate::relspec::{PropertyInstance, PropertyKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Nonrel,
    Io,
    Indiv,
    IndivMilp,
    Cross,
    Racoon,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Nonrel,
        Method::Io,
        Method::Indiv,
        Method::IndivMilp,
        Method::Cross,
        Method::Racoon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Nonrel => "nonrel",
            Method::Io => "io",
            Method::Indiv => "indiv",
            Method::IndivMilp => "indiv-milp",
            Method::Cross => "cross",
            Method::Racoon => "racoon",
        }
    }

    /// Methods whose results this one must dominate.
    fn chain_below(self) -> &'static [Method] {
        match self {
            Method::Nonrel | Method::Io | Method::Cross => &[],
            Method::Indiv => &[Method::Nonrel],
            Method::IndivMilp => &[Method::Indiv, Method::Nonrel],
            Method::Racoon => &[Method::Io, Method::IndivMilp, Method::Indiv, Method::Nonrel],
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Precondition(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub k0: usize,
    pub k1: usize,
    pub refine: RefineConfig,
    /// Leave executions already proved by their own bounds out of the MILP.
    pub elimination: bool,
    pub mode: BoundMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k0: 6,
            k1: 4,
            refine: RefineConfig::default(),
            elimination: true,
            mode: BoundMode::Crown,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k1 == 0 || self.k0 < self.k1 {
            return Err(Error::Precondition(format!(
                "need k0 >= k1 >= 1, got k0={} k1={}",
                self.k0, self.k1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    VerifiedIndividually,
    CoveredBySubset,
    Unverified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub index: usize,
    pub status: Status,
    pub s_i: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRecord {
    pub members: Vec<usize>,
    pub clause_targets: Vec<usize>,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilpRecord {
    pub objective: f64,
    pub witness_delta: Vec<f64>,
}

/// Result of one method on one instance.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub method: Method,
    pub kind: PropertyKind,
    pub k: usize,
    pub epsilon: f64,
    /// Worst-case k-UAP accuracy lower bound, or hamming distance upper bound.
    pub bound: usize,
    pub executions: Vec<ExecutionRecord>,
    pub subsets: Vec<SubsetRecord>,
    pub milp: Option<MilpRecord>,
    /// LP-format text of the solved model.
    pub model_dump: Option<String>,
    pub timings: BTreeMap<String, f64>,
}

/// Non-relational bounds for execution `i` with the heuristic slopes.
pub fn verify_individual(
    net: &Network,
    instance: &PropertyInstance,
    i: usize,
) -> Result<Execution> {
    if i >= instance.k() {
        return Err(Error::Precondition(format!(
            "execution {i} out of range for k={}",
            instance.k()
        )));
    }
    Execution::analyze(net, instance, i, BoundMode::Crown)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum FormLevel {
    Heuristic,
    Individual,
    Cross,
}

pub struct Pipeline<'a> {
    net: &'a Network,
    instance: &'a PropertyInstance,
    config: PipelineConfig,
    executions: Option<Vec<Execution>>,
    individual: Option<BTreeMap<usize, RefinementResult>>,
    cross: Option<Vec<RefinementResult>>,
    timings: BTreeMap<&'static str, f64>,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        net: &'a Network,
        instance: &'a PropertyInstance,
        config: PipelineConfig,
    ) -> Result<Self> {
        config.validate()?;
        instance.check_network(net)?;
        Ok(Pipeline {
            net,
            instance,
            config,
            executions: None,
            individual: None,
            cross: None,
            timings: BTreeMap::new(),
        })
    }

    fn ensure_executions(&mut self) -> Result<()> {
        if self.executions.is_none() {
            let start = Instant::now();
            let execs = (0..self.instance.k())
                .into_par_iter()
                .map(|i| Execution::analyze(self.net, self.instance, i, self.config.mode))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.in_phase("bounds"))?;
            self.executions = Some(execs);
            self.timings.insert("bounds", start.elapsed().as_secs_f64());
        }
        Ok(())
    }

    fn executions(&self) -> &[Execution] {
        self.executions.as_deref().expect("bounds computed")
    }

    /// Executions left open by the non-relational bounds.
    fn open(&self) -> Vec<usize> {
        self.executions()
            .iter()
            .filter(|e| !e.verified())
            .map(|e| e.index)
            .collect()
    }

    fn refiner(&self) -> Refiner<'_> {
        Refiner::new(self.net, self.instance, self.executions(), self.config.refine)
    }

    fn ensure_individual(&mut self) -> Result<()> {
        self.ensure_executions()?;
        if self.individual.is_none() {
            let start = Instant::now();
            let refiner = self.refiner();
            let results = self
                .open()
                .into_par_iter()
                .map(|i| refiner.refine_individual(i).map(|r| (i, r)))
                .collect::<Result<BTreeMap<_, _>>>()
                .map_err(|e| e.in_phase("individual refinement"))?;
            self.individual = Some(results);
            self.timings
                .insert("individual", start.elapsed().as_secs_f64());
        }
        Ok(())
    }

    fn individual(&self) -> &BTreeMap<usize, RefinementResult> {
        self.individual.as_ref().expect("individual refinement computed")
    }

    /// Executions still open after individual refinement.
    fn still_open(&self) -> Vec<usize> {
        self.individual()
            .iter()
            .filter(|(_, r)| !r.verified)
            .map(|(&i, _)| i)
            .collect()
    }

    fn ensure_cross(&mut self) -> Result<()> {
        self.ensure_individual()?;
        if self.cross.is_none() {
            let start = Instant::now();
            let scores: Vec<(usize, f64)> = self
                .still_open()
                .into_iter()
                .map(|i| (i, self.executions()[i].score()))
                .collect();
            let results = if scores.is_empty() {
                Vec::new()
            } else {
                let subsets = schedule_subsets(&scores, self.config.k0, self.config.k1)
                    .map_err(|e| e.in_phase("scheduling"))?;
                let refiner = self.refiner();
                let individual = self.individual();
                subsets
                    .into_par_iter()
                    .map(|s| {
                        if s.len() == 1 {
                            Ok(individual[&s[0]].clone())
                        } else {
                            refiner.refine_cross(&s, Some(individual))
                        }
                    })
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| e.in_phase("cross refinement"))?
            };
            self.cross = Some(results);
            self.timings.insert("cross", start.elapsed().as_secs_f64());
        }
        Ok(())
    }

    fn cross(&self) -> &[RefinementResult] {
        self.cross.as_deref().expect("cross refinement computed")
    }

    fn approximations(&self, level: FormLevel) -> Approximations {
        let mut approx: Approximations = self
            .executions()
            .iter()
            .map(|e| e.forms.iter().map(|f| vec![f.clone()]).collect())
            .collect();
        let mut add = |member: usize, forms: &[LinearForm]| {
            for (j, f) in forms.iter().enumerate() {
                approx[member][j].push(f.clone());
            }
        };
        if level >= FormLevel::Individual {
            for (&i, r) in self.individual() {
                add(i, &r.forms[0]);
            }
        }
        if level >= FormLevel::Cross {
            for r in self.cross().iter().filter(|r| r.subset.len() > 1) {
                for (pos, &i) in r.subset.iter().enumerate() {
                    add(i, &r.forms[pos]);
                }
            }
        }
        approx
    }

    fn solve_milp(
        &mut self,
        level: FormLevel,
        open: Vec<usize>,
    ) -> Result<(usize, Option<MilpRecord>, Option<String>)> {
        let included: Vec<usize> = if self.config.elimination {
            open
        } else {
            (0..self.instance.k()).collect()
        };
        if included.is_empty() {
            let correct = self.instance.k();
            return Ok((self.instance.value_from_correct(correct), None, None));
        }
        let start = Instant::now();
        let approx = self.approximations(level);
        let model = build_milp(self.instance, &approx, &included).map_err(|e| e.in_phase("milp"))?;
        let solution = milp_solve(&model).map_err(|e| e.in_phase("milp"))?;
        let elapsed = start.elapsed().as_secs_f64();
        *self.timings.entry("milp").or_insert(0.0) += elapsed;
        let value = solution.objective.round();
        if value < 0.0 || value > self.instance.k() as f64 {
            return Err(Error::Solver(format!("MILP optimum {value} outside [0, k]")).in_phase("milp"));
        }
        Ok((
            value as usize,
            Some(MilpRecord {
                objective: solution.objective,
                witness_delta: solution.witness_delta,
            }),
            Some(model.to_string()),
        ))
    }

    fn records(&self, refined: bool, covered: &BTreeSet<usize>) -> Vec<ExecutionRecord> {
        self.executions()
            .iter()
            .map(|e| {
                let proved_alone = e.verified()
                    || (refined && self.individual().get(&e.index).is_some_and(|r| r.verified));
                let status = if proved_alone {
                    Status::VerifiedIndividually
                } else if covered.contains(&e.index) {
                    Status::CoveredBySubset
                } else {
                    Status::Unverified
                };
                ExecutionRecord {
                    index: e.index,
                    status,
                    s_i: e.score(),
                }
            })
            .collect()
    }

    pub fn evaluate(&mut self, method: Method) -> Result<Outcome> {
        self.ensure_executions()?;
        let inst = self.instance;
        let k = inst.k();
        let milp_ok = inst.norm.is_inf();
        let mut subsets = Vec::new();
        let mut covered = BTreeSet::new();
        let mut milp = None;
        let mut model_dump = None;
        let refined = !matches!(method, Method::Nonrel | Method::Io);
        let bound = match method {
            Method::Nonrel => inst.value_from_correct(k - self.open().len()),
            Method::Io => {
                let open = self.open();
                if milp_ok {
                    let (v, rec, dump) = self.solve_milp(FormLevel::Heuristic, open)?;
                    milp = rec;
                    model_dump = dump;
                    v
                } else {
                    inst.value_from_correct(k - open.len())
                }
            }
            Method::Indiv | Method::IndivMilp => {
                self.ensure_individual()?;
                subsets = self.individual().values().map(subset_record).collect();
                let open = self.still_open();
                if method == Method::IndivMilp && milp_ok {
                    let (v, rec, dump) = self.solve_milp(FormLevel::Individual, open)?;
                    milp = rec;
                    model_dump = dump;
                    v
                } else {
                    inst.value_from_correct(k - open.len())
                }
            }
            Method::Cross | Method::Racoon => {
                self.ensure_cross()?;
                subsets = self.cross().iter().map(subset_record).collect();
                let safe: Vec<Vec<usize>> = self
                    .cross()
                    .iter()
                    .filter(|r| r.verified && r.subset.len() > 1)
                    .map(|r| r.subset.clone())
                    .collect();
                covered.extend(safe.iter().flatten().copied());
                let open = self.still_open();
                if method == Method::Racoon && milp_ok {
                    let (v, rec, dump) = self.solve_milp(FormLevel::Cross, open)?;
                    milp = rec;
                    model_dump = dump;
                    v
                } else {
                    let correct = count_bound_from_proofs(k - open.len(), &open, &safe)
                        .map_err(|e| e.in_phase("counting"))?;
                    inst.value_from_correct(correct)
                }
            }
        };
        let phases: &[&str] = match method {
            Method::Nonrel => &["bounds"],
            Method::Io => &["bounds", "milp"],
            Method::Indiv => &["bounds", "individual"],
            Method::IndivMilp => &["bounds", "individual", "milp"],
            Method::Cross => &["bounds", "individual", "cross"],
            Method::Racoon => &["bounds", "individual", "cross", "milp"],
        };
        let timings = phases
            .iter()
            .filter_map(|p| self.timings.get(p).map(|&t| (p.to_string(), t)))
            .collect();
        // a later method's MILP time must not leak into this one
        self.timings.remove("milp");
        Ok(Outcome {
            method,
            kind: inst.kind,
            k,
            epsilon: inst.epsilon,
            bound,
            executions: self.records(refined, &covered),
            subsets,
            milp,
            model_dump,
            timings,
        })
    }
}

fn subset_record(r: &RefinementResult) -> SubsetRecord {
    SubsetRecord {
        members: r.subset.clone(),
        clause_targets: r.clause_targets.clone(),
        bound: r.bound,
    }
}

/// Checks `racoon ≥ io`, `racoon ≥ indiv-milp ≥ indiv ≥ nonrel` (k-UAP) or
/// the reversed inequalities (hamming) among the methods present.
pub fn check_chain(kind: PropertyKind, bounds: &BTreeMap<Method, usize>) -> Result<()> {
    for (&upper, &ub) in bounds {
        for lower in upper.chain_below() {
            let Some(&lb) = bounds.get(lower) else { continue };
            let ok = match kind {
                PropertyKind::Kuap => ub >= lb,
                PropertyKind::Hamming => ub <= lb,
            };
            if !ok {
                return Err(Error::Precondition(format!(
                    "dominance violated: {upper} gives {ub} but {lower} gives {lb} ({kind})"
                )));
            }
        }
    }
    Ok(())
}

/// Evaluates every requested method on shared stages and checks the
/// dominance chain among them.
pub fn run_methods(
    net: &Network,
    instance: &PropertyInstance,
    config: PipelineConfig,
    methods: &[Method],
) -> Result<BTreeMap<Method, Outcome>> {
    let mut pipeline = Pipeline::new(net, instance, config)?;
    let mut out = BTreeMap::new();
    for &m in methods {
        out.insert(m, pipeline.evaluate(m)?);
    }
    let bounds = out.iter().map(|(&m, o)| (m, o.bound)).collect();
    check_chain(instance.kind, &bounds)?;
    Ok(out)
}

/// Runs `method` together with the baselines it must dominate.
pub fn run(
    net: &Network,
    instance: &PropertyInstance,
    method: Method,
    config: PipelineConfig,
) -> Result<Outcome> {
    let mut methods = vec![method];
    methods.extend_from_slice(method.chain_below());
    let mut all = run_methods(net, instance, config, &methods)?;
    Ok(all.remove(&method).expect("requested method evaluated"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::cancellation_instance;
    use crate::model::Layer;
    use crate::norm::Norm;
    use crate::relspec::{build_hamming, build_kuap};
    use ndarray::{array, Array2};

    fn identity(n: usize) -> Network {
        Network::new(n, vec![Layer::affine(Array2::eye(n), ndarray::Array1::zeros(n)).unwrap()])
            .unwrap()
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("milp".parse::<Method>().is_err());
    }

    #[test]
    fn identity_margin() {
        let net = identity(3);
        let inst = build_kuap(vec![array![0.0, 1.0, 0.0]], vec![1], 0.1, Norm::Inf, 3).unwrap();
        let e = verify_individual(&net, &inst, 0).unwrap();
        assert!((e.score() - 0.8).abs() < 1e-12);
        assert!(verify_individual(&net, &inst, 1).is_err());
    }

    #[test]
    fn all_verified_fast_path() {
        let net = identity(2);
        let inputs = vec![array![1.0, 0.0], array![0.0, 1.0]];
        let inst = build_kuap(inputs.clone(), vec![0, 1], 0.1, Norm::Inf, 2).unwrap();
        let all = run_methods(&net, &inst, PipelineConfig::default(), &Method::ALL).unwrap();
        for o in all.values() {
            assert_eq!(o.bound, 2);
            assert!(o.milp.is_none());
        }
        let ham = build_hamming(inputs, vec![0, 1], 0.1, Norm::Inf).unwrap();
        let o = run(&net, &ham, Method::Racoon, PipelineConfig::default()).unwrap();
        assert_eq!(o.bound, 0);
    }

    #[test]
    fn cancellation_pair_needs_cross() {
        let (net, inst) = cancellation_instance(0.1, 0.005).unwrap();
        let all = run_methods(&net, &inst, PipelineConfig::default(), &Method::ALL).unwrap();
        assert_eq!(all[&Method::Nonrel].bound, 0);
        assert_eq!(all[&Method::Indiv].bound, 0);
        assert_eq!(all[&Method::Io].bound, 1);
        assert_eq!(all[&Method::Cross].bound, 1);
        assert_eq!(all[&Method::Racoon].bound, 1);
        let cross = &all[&Method::Cross];
        assert_eq!(cross.subsets.len(), 3);
        assert!(cross
            .executions
            .iter()
            .all(|e| e.status == Status::CoveredBySubset));
    }

    #[test]
    fn chain_violation_reported() {
        let mut b = BTreeMap::new();
        b.insert(Method::Nonrel, 3);
        b.insert(Method::Indiv, 2);
        assert!(check_chain(PropertyKind::Kuap, &b).is_err());
        assert!(check_chain(PropertyKind::Hamming, &b).is_ok());
    }

    #[test]
    fn bad_config() {
        let net = identity(2);
        let inst = build_kuap(vec![array![1.0, 0.0]], vec![0], 0.1, Norm::Inf, 2).unwrap();
        let cfg = PipelineConfig {
            k0: 2,
            k1: 3,
            ..PipelineConfig::default()
        };
        assert!(Pipeline::new(&net, &inst, cfg).is_err());
    }
}
