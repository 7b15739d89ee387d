//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::{Array1, ArrayView1};
use rand::Rng;
use relcert::corpus::{cancellation_instance, random_network, rng, small_corpus, small_sample, Sample};
use relcert::crown::{
    backward_linear_bound, bound_gradient, concretize, preactivation_bounds, selection_margin,
    AlphaVector, LinearForm,
};
use relcert::milp::{build_lp_pairwise, build_milp, lp_solve, milp_solve};
use relcert::model::Network;
use relcert::norm::Norm;
use relcert::oracle::{enumerate_milp, finite_diff, grid_attack, GridSpec};
use relcert::pipeline::{run_methods, Method, PipelineConfig};
use relcert::refine::{
    g_closed_form, g_closed_form_grad, schedule_subsets, Execution, RefineConfig, Refiner,
};
use relcert::relspec::{build_hamming, build_kuap, DataFile, PropertyInstance, PropertyKind};

type Check = std::result::Result<String, String>;

fn corpus() -> Vec<Sample> {
    let mut all = small_corpus(0, 50, PropertyKind::Kuap).unwrap();
    all.extend(small_corpus(1000, 50, PropertyKind::Hamming).unwrap());
    all
}

fn c1_soundness(results: &BTreeMap<u64, BTreeMap<Method, usize>>, samples: &[Sample]) -> Check {
    let start = Instant::now();
    let mut violations = Vec::new();
    for s in samples {
        let grid = GridSpec::new(101, Norm::Inf, s.instance.epsilon).unwrap();
        let g = grid_attack(&s.net, &s.instance, &grid).unwrap();
        for (m, &b) in &results[&s.seed] {
            let ok = match s.instance.kind {
                PropertyKind::Kuap => b <= g.min_correct,
                PropertyKind::Hamming => b >= g.max_mismatches,
            };
            if !ok {
                violations.push(format!("seed {} {m}: {b}", s.seed));
            }
        }
    }
    if violations.is_empty() {
        Ok(format!("{} instances x 6 methods, grid {:.1}s", samples.len(), start.elapsed().as_secs_f64()))
    } else {
        Err(violations.join("; "))
    }
}

fn open_pairs(count: usize) -> Vec<(Network, PropertyInstance)> {
    let mut out = Vec::new();
    let mut seed = 5000;
    while out.len() < count {
        seed += 1;
        let s = small_sample(seed, PropertyKind::Kuap).unwrap();
        let inst = build_kuap(
            s.instance.inputs[..2].to_vec(),
            s.instance.labels[..2].to_vec(),
            s.instance.epsilon,
            Norm::Inf,
            s.net.output_dim(),
        )
        .unwrap();
        let open = (0..2).all(|i| {
            !Execution::analyze(&s.net, &inst, i, Default::default())
                .unwrap()
                .verified()
        });
        if open {
            out.push((s.net, inst));
        }
    }
    out
}

fn c2_cross_vs_individual() -> Check {
    let mut worst_gap = f64::INFINITY;
    for (net, inst) in open_pairs(50) {
        let execs: Vec<Execution> = (0..2)
            .map(|i| Execution::analyze(&net, &inst, i, Default::default()).unwrap())
            .collect();
        let refiner = Refiner::new(&net, &inst, &execs, RefineConfig::default());
        let indiv = (0..2)
            .map(|i| refiner.refine_individual(i).unwrap().bound)
            .fold(f64::NEG_INFINITY, f64::max);
        let cross = refiner.refine_cross(&[0, 1], None).unwrap().bound;
        worst_gap = worst_gap.min(cross - indiv);
    }
    if worst_gap < -1e-9 {
        return Err(format!("cross below individual by {:.3e}", -worst_gap));
    }
    let eps = 0.1;
    let (net, inst) = cancellation_instance(eps, 0.0).unwrap();
    let execs: Vec<Execution> = (0..2)
        .map(|i| Execution::analyze(&net, &inst, i, Default::default()).unwrap())
        .collect();
    let refiner = Refiner::new(&net, &inst, &execs, RefineConfig::default());
    let cross = refiner.refine_cross(&[0, 1], None).unwrap();
    let l1: f64 = cross.forms[0][0].coeffs.iter().map(|v| v.abs()).sum();
    let mut indiv_ok = true;
    for i in 0..2 {
        let r = refiner.refine_individual(i).unwrap();
        indiv_ok &= r.bound <= -eps * l1 + 1e-9;
    }
    if cross.bound < -1e-9 || !indiv_ok {
        return Err(format!("cancellation: cross {} individual bound above -eps*|L|", cross.bound));
    }
    Ok(format!("min cross-indiv gap {worst_gap:.3e}; cancellation cross t={}", cross.bound))
}

fn random_forms(r: &mut impl Rng, n: usize, dim: usize) -> (Vec<LinearForm>, Vec<Array1<f64>>) {
    let forms = (0..n)
        .map(|_| {
            LinearForm::new(
                Array1::from_shape_fn(dim, |_| r.gen_range(-2.0..2.0)),
                r.gen_range(-0.5..0.5),
            )
        })
        .collect();
    let xs = (0..n)
        .map(|_| Array1::from_shape_fn(dim, |_| r.gen_range(-1.0..1.0)))
        .collect();
    (forms, xs)
}

fn c3_dual_lp_agreement() -> Check {
    let mut worst: f64 = 0.0;
    let mut worst_fine: f64 = 0.0;
    let mut count = 0;
    let mut seed = 7000;
    while count < 50 {
        seed += 1;
        let s = small_sample(seed, PropertyKind::Kuap).unwrap();
        let x0 = s.instance.inputs[0].view();
        let x1 = s.instance.inputs[1].view();
        let eps = s.instance.epsilon;
        let forms: Vec<LinearForm> = (0..2)
            .map(|i| {
                let x = s.instance.inputs[i].view();
                let cache = preactivation_bounds(&s.net, x, eps, Norm::Inf).unwrap();
                let alpha = AlphaVector::heuristic(&cache);
                backward_linear_bound(&s.net, &cache, s.instance.clauses[i].row(0).view(), &alpha)
                    .unwrap()
            })
            .collect();
        let centers = [x0, x1];
        let lp = build_lp_pairwise(&forms, &centers, eps, Norm::Inf).unwrap();
        let t = lp_solve(&lp).unwrap().value().unwrap();
        let grid_max = |points: usize| {
            (0..points)
                .map(|j| {
                    let l = j as f64 / (points - 1) as f64;
                    let lambdas = Array1::from(vec![l, 1.0 - l]);
                    g_closed_form(lambdas.view(), &forms, &centers, eps, Norm::Inf).unwrap()
                })
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let dual = grid_max(1001);
        if dual > t + 1e-9 {
            return Err(format!("seed {seed}: dual {dual} exceeds LP optimum {t}"));
        }
        worst = worst.max(t - dual);
        worst_fine = worst_fine.max(t - grid_max(100_001));
        count += 1;
    }
    if worst <= 1e-4 {
        Ok(format!("50 pairs, max |LP - grid max G| = {worst:.2e}"))
    } else {
        Err(format!(
            "max |LP - grid max G| = {worst:.2e} (1001 points); {worst_fine:.2e} with 100001 points"
        ))
    }
}

fn c4_closed_form() -> Check {
    let mut r = rng(42);
    let eps = 0.15;
    for _ in 0..20 {
        let (forms, xs) = random_forms(&mut r, 2, 3);
        let centers: Vec<ArrayView1<f64>> = xs.iter().map(|x| x.view()).collect();
        let l = r.gen_range(0.0..1.0);
        let lambdas = Array1::from(vec![l, 1.0 - l]);
        let weighted = |d: &Array1<f64>| -> f64 {
            forms
                .iter()
                .zip(&centers)
                .zip(lambdas.iter())
                .map(|((f, x), &w)| w * f.eval(*x, d.view()))
                .sum()
        };
        let g = g_closed_form(lambdas.view(), &forms, &centers, eps, Norm::Inf).unwrap();
        for _ in 0..10_000 {
            let d = Array1::from_shape_fn(3, |_| r.gen_range(-eps..=eps));
            if weighted(&d) < g - 1e-12 {
                return Err("sampled delta below G".into());
            }
        }
        let combined = &forms[0].coeffs * lambdas[0] + &forms[1].coeffs * lambdas[1];
        let d_star = combined.mapv(|v| -eps * v.signum());
        if (weighted(&d_star) - g).abs() > 1e-9 {
            return Err("analytic minimizer misses G".into());
        }
        let g2 = g_closed_form(lambdas.view(), &forms, &centers, eps, Norm::P(2.0)).unwrap();
        let sphere_min = (0..10_000)
            .map(|_| {
                let v = Array1::from_shape_fn(3, |_| r.gen_range(-1.0..1.0f64));
                let n = v.dot(&v).sqrt();
                weighted(&(v * (eps / n)))
            })
            .fold(f64::INFINITY, f64::min);
        if g2 > sphere_min + 1e-12 || sphere_min - g2 > 1e-3 {
            return Err(format!("p=2: G={g2} sample min={sphere_min}"));
        }
    }
    Ok("20 random pairs, 10^4 samples each, p=inf and p=2".into())
}

fn c5_milp_exact() -> Check {
    let start = Instant::now();
    let mut r = rng(99);
    for t in 0..200 {
        let hamming = t % 2 == 1;
        let k = r.gen_range(1..=4);
        let m = if hamming { 1 } else { r.gen_range(1..=2) };
        let n0 = r.gen_range(1..=3);
        let eps = r.gen_range(0.05..0.5);
        let inputs: Vec<Array1<f64>> = (0..k)
            .map(|_| Array1::from_shape_fn(n0, |_| r.gen_range(-1.0..1.0)))
            .collect();
        let labels: Vec<usize> = (0..k).map(|_| r.gen_range(0..=m)).collect();
        let inst = if hamming {
            build_hamming(inputs, labels, eps, Norm::Inf).unwrap()
        } else {
            build_kuap(inputs, labels, eps, Norm::Inf, m + 1).unwrap()
        };
        let approx: Vec<Vec<Vec<LinearForm>>> = (0..k)
            .map(|_| {
                (0..m)
                    .map(|_| {
                        let nf = r.gen_range(1..=3);
                        random_forms(&mut r, nf, n0).0
                    })
                    .collect()
            })
            .collect();
        let included: Vec<usize> = (0..k).filter(|_| r.gen_bool(0.85)).collect();
        let model = build_milp(&inst, &approx, &included).unwrap();
        let a = milp_solve(&model).unwrap().objective;
        let b = enumerate_milp(&model).unwrap();
        if a.round() != b.round() || (a - a.round()).abs() > 1e-6 || (b - b.round()).abs() > 1e-6 {
            return Err(format!("model {t}: branch-and-bound {a} vs enumeration {b}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs > 180.0 {
        return Err(format!("took {secs:.1}s"));
    }
    Ok(format!("200 models agree, {secs:.1}s"))
}

fn c6_dominance(results: &BTreeMap<u64, BTreeMap<Method, usize>>, samples: &[Sample]) -> Check {
    let mut bad = Vec::new();
    for s in samples {
        let b = &results[&s.seed];
        let ge = |a: Method, c: Method| match s.instance.kind {
            PropertyKind::Kuap => b[&a] >= b[&c],
            PropertyKind::Hamming => b[&a] <= b[&c],
        };
        let ok = ge(Method::Racoon, Method::Io)
            && ge(Method::Racoon, Method::IndivMilp)
            && ge(Method::IndivMilp, Method::Indiv)
            && ge(Method::Indiv, Method::Nonrel);
        if !ok {
            bad.push(format!("seed {}: {b:?}", s.seed));
        }
    }
    let improved = samples
        .iter()
        .filter(|s| results[&s.seed][&Method::Racoon] != results[&s.seed][&Method::Nonrel])
        .count();
    if bad.is_empty() {
        Ok(format!("0 violations; racoon differs from nonrel on {improved} instances"))
    } else {
        Err(bad.join("; "))
    }
}

fn c7_elimination(samples: &[Sample]) -> Check {
    for s in samples.iter().take(50) {
        let with = run_methods(&s.net, &s.instance, PipelineConfig::default(), &[Method::Racoon]).unwrap();
        let cfg = PipelineConfig {
            elimination: false,
            ..PipelineConfig::default()
        };
        let without = run_methods(&s.net, &s.instance, cfg, &[Method::Racoon]).unwrap();
        if with[&Method::Racoon].bound != without[&Method::Racoon].bound {
            return Err(format!(
                "seed {}: {} with elimination, {} without",
                s.seed, with[&Method::Racoon].bound, without[&Method::Racoon].bound
            ));
        }
    }
    Ok("50 instances agree".into())
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(a.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn c8_gradients() -> Check {
    let mut r = rng(314);
    let h = 1e-5;
    let mut alpha_points = 0;
    let mut worst: f64 = 0.0;
    let mut attempts = 0;
    while alpha_points < 100 {
        attempts += 1;
        if attempts > 10_000 {
            return Err(format!("only {alpha_points} usable points"));
        }
        let net = random_network(&mut r, 2, &[8, 8], 3).unwrap();
        let x = Array1::from_shape_fn(2, |_| r.gen_range(-1.0..1.0));
        let eps = 0.3;
        let cache = preactivation_bounds(&net, x.view(), eps, Norm::Inf).unwrap();
        if cache.unstable_count() == 0 {
            continue;
        }
        let mut alpha = AlphaVector::heuristic(&cache);
        let flat: Vec<f64> = alpha.to_flat().iter().map(|_| r.gen_range(0.05..0.95)).collect();
        alpha.set_flat(&flat);
        let mut c = Array1::zeros(3);
        c[0] = 1.0;
        c[1] = -1.0;
        let form = backward_linear_bound(&net, &cache, c.view(), &alpha).unwrap();
        let near_kink = selection_margin(&net, &cache, c.view(), &alpha).unwrap() < 1e-6
            || form.coeffs.iter().any(|v| v.abs() < 1e-6);
        if near_kink {
            continue;
        }
        let (_, grad) = bound_gradient(&net, &cache, c.view(), &alpha, x.view(), eps, Norm::Inf).unwrap();
        let f = |p: &[f64]| {
            let mut a = alpha.clone();
            a.set_flat(p);
            let form = backward_linear_bound(&net, &cache, c.view(), &a).unwrap();
            concretize(&form, x.view(), eps, Norm::Inf).unwrap()
        };
        let fd = finite_diff(f, &flat, h);
        worst = worst.max(rel_err(&grad.to_flat(), &fd));
        alpha_points += 1;
    }
    let mut g_points = 0;
    while g_points < 100 {
        let (forms, xs) = random_forms(&mut r, 3, 2);
        let centers: Vec<ArrayView1<f64>> = xs.iter().map(|x| x.view()).collect();
        let raw = Array1::from_shape_fn(3, |_| r.gen_range(0.1..1.0));
        let lambdas = &raw / raw.sum();
        let combined = forms
            .iter()
            .zip(lambdas.iter())
            .fold(Array1::zeros(2), |acc, (f, &l)| acc + &f.coeffs * l);
        if combined.iter().any(|v: &f64| v.abs() < 1e-6) {
            continue;
        }
        let grad = g_closed_form_grad(lambdas.view(), &forms, &centers, 0.2, Norm::Inf).unwrap();
        let fd = finite_diff(
            |p| g_closed_form(ArrayView1::from(p), &forms, &centers, 0.2, Norm::Inf).unwrap(),
            lambdas.as_slice().unwrap(),
            h,
        );
        worst = worst.max(rel_err(grad.d_lambda.as_slice().unwrap(), &fd));
        for i in 0..3 {
            let fd = finite_diff(
                |p| {
                    let mut fs = forms.clone();
                    fs[i].coeffs = Array1::from(p.to_vec());
                    g_closed_form(lambdas.view(), &fs, &centers, 0.2, Norm::Inf).unwrap()
                },
                forms[i].coeffs.as_slice().unwrap(),
                h,
            );
            worst = worst.max(rel_err(grad.d_coeffs[i].as_slice().unwrap(), &fd));
        }
        g_points += 1;
    }
    if worst < 1e-4 {
        Ok(format!("100 slope points + 100 multiplier points, max rel err {worst:.2e}"))
    } else {
        Err(format!("max rel err {worst:.2e}"))
    }
}

fn c9_subset_count() -> Check {
    let scores: Vec<(usize, f64)> = (0..9).map(|i| (i, -0.1 * i as f64)).collect();
    let n = schedule_subsets(&scores, 6, 4).unwrap().len();
    if n == 56 {
        Ok("56 subsets".into())
    } else {
        Err(format!("{n} subsets"))
    }
}

fn c10_determinism() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let s = small_sample(3, PropertyKind::Kuap).unwrap();
    let net_path = dir.path().join("net.json");
    let data_path = dir.path().join("data.json");
    std::fs::write(&net_path, serde_json::to_string(&s.net.to_json()).unwrap()).unwrap();
    std::fs::write(&data_path, serde_json::to_string(&DataFile::from_instance(&s.instance)).unwrap()).unwrap();
    let mut outputs = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("r{run}.json"));
        let status = Command::new(env!("CARGO_BIN_EXE_relcert"))
            .args(["verify", "--network"])
            .arg(&net_path)
            .arg("--data")
            .arg(&data_path)
            .args(["--property", "kuap", "--method", "racoon", "--seed", "1", "--no-timings", "--out"])
            .arg(&out)
            .output()
            .unwrap();
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        outputs.push(std::fs::read(&out).unwrap());
    }
    if outputs[0] == outputs[1] {
        Ok(format!("{} identical bytes", outputs[0].len()))
    } else {
        Err("reports differ".into())
    }
}

fn main() {
    let samples = corpus();
    let start = Instant::now();
    let mut results = BTreeMap::new();
    let mut pipeline_err = None;
    for s in &samples {
        match run_methods(&s.net, &s.instance, PipelineConfig::default(), &Method::ALL) {
            Ok(out) => {
                results.insert(s.seed, out.into_iter().map(|(m, o)| (m, o.bound)).collect::<BTreeMap<_, _>>());
            }
            Err(e) => {
                pipeline_err = Some(format!("seed {}: {e}", s.seed));
                break;
            }
        }
    }
    let corpus_time = start.elapsed();

    let timed = |f: &dyn Fn() -> Check| {
        let t = Instant::now();
        let c = f();
        (c, t.elapsed())
    };
    let mut lines: Vec<(usize, &str, Check, Duration)> = Vec::new();
    if let Some(e) = pipeline_err {
        lines.push((1, "soundness", Err(e.clone()), corpus_time));
        lines.push((6, "dominance chain", Err(e), corpus_time));
    } else {
        let (c, t) = timed(&|| c1_soundness(&results, &samples));
        let total = t + corpus_time;
        let c = c.and_then(|m| {
            if total.as_secs_f64() < 300.0 {
                Ok(m)
            } else {
                Err(format!("exceeded 5 min ({:.1}s)", total.as_secs_f64()))
            }
        });
        lines.push((1, "soundness", c, total));
        let (c, t) = timed(&|| c6_dominance(&results, &samples));
        lines.push((6, "dominance chain", c, t));
    }
    let (c, t) = timed(&c2_cross_vs_individual);
    lines.push((2, "cross vs individual", c, t));
    let (c, t) = timed(&c3_dual_lp_agreement);
    lines.push((3, "dual/LP agreement", c, t));
    let (c, t) = timed(&c4_closed_form);
    lines.push((4, "closed form of G", c, t));
    let (c, t) = timed(&c5_milp_exact);
    lines.push((5, "MILP exactness", c, t));
    let (c, t) = timed(&|| c7_elimination(&samples));
    lines.push((7, "elimination neutrality", c, t));
    let (c, t) = timed(&c8_gradients);
    lines.push((8, "gradients vs finite differences", c, t));
    let (c, t) = timed(&c9_subset_count);
    lines.push((9, "subset schedule size", c, t));
    let (c, t) = timed(&c10_determinism);
    lines.push((10, "deterministic reports", c, t));

    lines.sort_by_key(|l| l.0);
    let mut failed = 0;
    for (n, name, check, elapsed) in lines {
        let secs = elapsed.as_secs_f64();
        match check {
            Ok(msg) => println!("criterion {n:>2} PASS  {name}: {msg} [{secs:.1}s]"),
            Err(msg) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {msg} [{secs:.1}s]");
            }
        }
    }

    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
