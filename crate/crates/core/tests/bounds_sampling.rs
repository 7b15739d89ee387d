use ndarray::{Array1, ArrayView1};
use rand::Rng;
use relcert::corpus::{random_network, rng};
use relcert::crown::{
    backward_linear_bound, concretize, preactivation_bounds, preactivation_bounds_with,
    AlphaVector, BoundMode, LinearForm,
};
use relcert::model::{Layer, Network};
use relcert::norm::Norm;
use relcert::oracle::eval_plain;

fn sample_ball(r: &mut impl Rng, dim: usize, eps: f64, norm: Norm) -> Array1<f64> {
    match norm {
        Norm::Inf => Array1::from_shape_fn(dim, |_| r.gen_range(-eps..=eps)),
        Norm::P(_) => loop {
            let v = Array1::from_shape_fn(dim, |_| r.gen_range(-eps..=eps));
            if norm.eval(v.view()) <= eps {
                break v;
            }
        },
    }
}

fn preactivations(net: &Network, x: ArrayView1<f64>) -> Vec<Array1<f64>> {
    let mut out = Vec::new();
    let mut h = x.to_owned();
    for layer in net.layers() {
        match layer {
            Layer::Affine { weight, bias } => h = weight.dot(&h) + bias,
            Layer::Relu => {
                out.push(h.clone());
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
    }
    out
}

#[test]
fn forward_matches_plain_evaluator() {
    let mut r = rng(1);
    let net = random_network(&mut r, 4, &[7, 5], 3).unwrap();
    for _ in 0..100 {
        let x = Array1::from_shape_fn(4, |_| r.gen_range(-2.0..2.0));
        let a = net.forward(x.view()).unwrap();
        let b = eval_plain(&net, x.as_slice().unwrap());
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() <= 1e-12);
        }
    }
}

#[test]
fn preactivation_bounds_contain_samples() {
    let mut r = rng(2);
    for (mode, norm) in [
        (BoundMode::Crown, Norm::Inf),
        (BoundMode::Interval, Norm::Inf),
        (BoundMode::Crown, Norm::P(2.0)),
    ] {
        let net = random_network(&mut r, 3, &[10, 10], 4).unwrap();
        let x = Array1::from_shape_fn(3, |_| r.gen_range(-1.0..1.0));
        let eps = 0.3;
        let cache = preactivation_bounds_with(&net, x.view(), eps, norm, mode).unwrap();
        for _ in 0..10_000 {
            let d = sample_ball(&mut r, 3, eps, norm);
            let pre = preactivations(&net, (&x + &d).view());
            for (z, lb) in pre.iter().zip(cache.layers()) {
                for k in 0..z.len() {
                    assert!(z[k] >= lb.lower[k] - 1e-9 && z[k] <= lb.upper[k] + 1e-9);
                }
            }
        }
    }
}

#[test]
fn crown_is_tighter_than_intervals() {
    let mut r = rng(3);
    let net = random_network(&mut r, 2, &[12, 12, 12], 3).unwrap();
    let x = Array1::from_shape_fn(2, |_| r.gen_range(-1.0..1.0));
    let crown = preactivation_bounds(&net, x.view(), 0.2, Norm::Inf).unwrap();
    let ibp = preactivation_bounds_with(&net, x.view(), 0.2, Norm::Inf, BoundMode::Interval).unwrap();
    let width = |c: &relcert::crown::BoundsCache| -> f64 {
        c.layers().iter().map(|l| (&l.upper - &l.lower).sum()).sum()
    };
    assert!(width(&crown) <= width(&ibp) + 1e-9);
}

#[test]
fn linear_bound_holds_for_any_alpha() {
    let mut r = rng(4);
    for trial in 0..20 {
        let net = random_network(&mut r, 2, &[8, 6], 3).unwrap();
        let x = Array1::from_shape_fn(2, |_| r.gen_range(-1.0..1.0));
        let eps = 0.25;
        let cache = preactivation_bounds(&net, x.view(), eps, Norm::Inf).unwrap();
        let mut alpha = AlphaVector::heuristic(&cache);
        let flat: Vec<f64> = alpha.to_flat().iter().map(|_| r.gen_range(0.0..=1.0)).collect();
        alpha.set_flat(&flat);
        let c = Array1::from_shape_fn(3, |_| r.gen_range(-1.0..1.0));
        let form = backward_linear_bound(&net, &cache, c.view(), &alpha).unwrap();
        let lower = concretize(&form, x.view(), eps, Norm::Inf).unwrap();
        for _ in 0..10_000 {
            let d = sample_ball(&mut r, 2, eps, Norm::Inf);
            let y = net.forward((&x + &d).view()).unwrap();
            let truth = c.dot(&y);
            assert!(form.eval(x.view(), d.view()) <= truth + 1e-9, "trial {trial}");
            assert!(lower <= truth + 1e-9);
        }
    }
}

#[test]
fn concretize_matches_sphere_minimum() {
    let mut r = rng(5);
    for _ in 0..10 {
        let form = LinearForm::new(
            Array1::from_shape_fn(2, |_| r.gen_range(-2.0..2.0)),
            r.gen_range(-1.0..1.0),
        );
        let x = Array1::from_shape_fn(2, |_| r.gen_range(-1.0..1.0));
        let eps = 0.3;
        let bound = concretize(&form, x.view(), eps, Norm::P(2.0)).unwrap();
        let grid_min = (0..4000)
            .map(|j| {
                let t = j as f64 * std::f64::consts::TAU / 4000.0;
                let d = ndarray::array![eps * t.cos(), eps * t.sin()];
                form.eval(x.view(), d.view())
            })
            .fold(f64::INFINITY, f64::min);
        assert!(bound <= grid_min + 1e-12);
        assert!(grid_min - bound < 1e-3);
    }
}
