//! Seeded random networks and property instances.

use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{Layer, Network};
use crate::norm::Norm;
use crate::relspec::{build_hamming, build_kuap, PropertyInstance, PropertyKind};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dense ReLU network with weights uniform in `[-1, 1]` scaled by `1/sqrt(fan_in)`.
pub fn random_network(
    rng: &mut impl Rng,
    input_dim: usize,
    hidden: &[usize],
    n_classes: usize,
) -> Result<Network> {
    let mut layers = Vec::new();
    let mut fan_in = input_dim;
    for &width in hidden.iter().chain(std::iter::once(&n_classes)) {
        let scale = 1.0 / (fan_in as f64).sqrt();
        let w = Array2::from_shape_fn((width, fan_in), |_| scale * rng.gen_range(-1.0..1.0));
        let b = Array1::from_shape_fn(width, |_| 0.2 * rng.gen_range(-1.0..1.0));
        layers.push(Layer::affine(w, b)?);
        layers.push(Layer::Relu);
        fan_in = width;
    }
    layers.pop();
    Network::new(input_dim, layers)
}

fn argmax(y: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in y.iter().enumerate() {
        if v > y[best] {
            best = i;
        }
    }
    best
}

/// `k` inputs near a common center, labelled with the network's clean prediction.
pub fn random_instance(
    rng: &mut impl Rng,
    net: &Network,
    kind: PropertyKind,
    k: usize,
    epsilon: f64,
    norm: Norm,
) -> Result<PropertyInstance> {
    let n0 = net.input_dim();
    let center = Array1::from_shape_fn(n0, |_| rng.gen_range(-1.0..1.0));
    let mut inputs = Vec::with_capacity(k);
    let mut labels = Vec::with_capacity(k);
    for _ in 0..k {
        let x = &center + &Array1::from_shape_fn(n0, |_| 0.5 * rng.gen_range(-1.0..1.0));
        labels.push(argmax(&net.forward(x.view())?));
        inputs.push(x);
    }
    match kind {
        PropertyKind::Kuap => build_kuap(inputs, labels, epsilon, norm, net.output_dim()),
        PropertyKind::Hamming => build_hamming(inputs, labels, epsilon, norm),
    }
}

/// One generated verification problem.
#[derive(Debug, Clone)]
pub struct Sample {
    pub seed: u64,
    pub net: Network,
    pub instance: PropertyInstance,
}

/// Small two-input problems: 2 or 3 affine layers of width at most 16,
/// `k ≤ 6`, inf-norm radius in `[0.02, 0.4]`. Hamming problems use two
/// classes; k-UAP problems use two or three.
pub fn small_sample(seed: u64, kind: PropertyKind) -> Result<Sample> {
    let mut r = rng(seed);
    let depth = r.gen_range(1..=2);
    let hidden: Vec<usize> = (0..depth).map(|_| r.gen_range(2..=16)).collect();
    let classes = match kind {
        PropertyKind::Kuap => r.gen_range(2..=3),
        PropertyKind::Hamming => 2,
    };
    let net = random_network(&mut r, 2, &hidden, classes)?;
    let k = r.gen_range(2..=6);
    let epsilon = r.gen_range(0.02..0.4);
    let instance = random_instance(&mut r, &net, kind, k, epsilon, Norm::Inf)?;
    Ok(Sample {
        seed,
        net,
        instance,
    })
}

pub fn small_corpus(first_seed: u64, count: usize, kind: PropertyKind) -> Result<Vec<Sample>> {
    (first_seed..first_seed + count as u64)
        .map(|s| small_sample(s, kind))
        .collect()
}

/// Two executions whose margins move in opposite directions under a shared
/// perturbation: `y = [x, −x]` through a ReLU that stays active for small
/// inputs, with inputs `±shift` labelled 0 and 1. The margins are
/// `2·shift ± 2δ`, so for `2·shift < 2ε` each execution alone can be broken
/// but, when `shift > 0`, never both together.
pub fn cancellation_instance(epsilon: f64, shift: f64) -> Result<(Network, PropertyInstance)> {
    let net = Network::new(
        1,
        vec![
            Layer::affine(array![[1.0]], array![1.0])?,
            Layer::Relu,
            Layer::affine(array![[1.0], [-1.0]], array![-1.0, 1.0])?,
        ],
    )?;
    let inst = build_kuap(vec![array![shift], array![-shift]], vec![0, 1], epsilon, Norm::Inf, 2)?;
    Ok((net, inst))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_are_reproducible() {
        let a = small_sample(7, PropertyKind::Kuap).unwrap();
        let b = small_sample(7, PropertyKind::Kuap).unwrap();
        assert_eq!(a.net, b.net);
        assert_eq!(a.instance.inputs, b.instance.inputs);
        assert!(a.instance.k() <= 6 && a.net.layers().len() <= 5);
    }

    #[test]
    fn cancellation_outputs() {
        let (net, _) = cancellation_instance(0.1, 0.0).unwrap();
        let y = net.forward(array![0.05].view()).unwrap();
        assert!((y[0] - 0.05).abs() < 1e-15 && (y[1] + 0.05).abs() < 1e-15);
    }
}
