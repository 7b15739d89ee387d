//! Backward linear bound propagation with parametric ReLU lower slopes.
//!
//! For an output functional `cᵀN(x + δ)` the backward pass produces a
//! [`LinearForm`] `(L, b)` with `Lᵀ(x + δ) + b ≤ cᵀN(x + δ)` for every `δ` in
//! the ball the [`BoundsCache`] was built for. Unstable ReLUs use the lower
//! line `α·t` and the chord upper line; stable ones are exact. The form is
//! concretized over the ball with the Hölder dual norm.
//!
//! Intermediate pre-activation bounds are computed once per center and radius
//! with the non-parametric slope choice and then stay frozen, so the output
//! form is a polynomial in `α` with fixed line selection between sign changes.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::model::{Layer, Network};
use crate::norm::Norm;

/// How intermediate bounds are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundMode {
    /// Backward linear propagation per layer.
    #[default]
    Crown,
    /// Plain interval arithmetic after the first layer. Looser; for debugging.
    Interval,
}

/// Pre-activation bounds of one ReLU layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBounds {
    pub lower: Array1<f64>,
    pub upper: Array1<f64>,
    unstable: Vec<usize>,
    slot: Vec<Option<usize>>,
}

impl LayerBounds {
    fn new(lower: Array1<f64>, upper: Array1<f64>) -> Self {
        let slot_and_unstable = classify(&lower, &upper);
        LayerBounds {
            lower,
            upper,
            unstable: slot_and_unstable.1,
            slot: slot_and_unstable.0,
        }
    }

    pub fn unstable(&self) -> &[usize] {
        &self.unstable
    }

    pub fn width(&self) -> usize {
        self.lower.len()
    }
}

fn classify(lower: &Array1<f64>, upper: &Array1<f64>) -> (Vec<Option<usize>>, Vec<usize>) {
    let mut slot = vec![None; lower.len()];
    let mut unstable = Vec::new();
    for k in 0..lower.len() {
        if lower[k] < 0.0 && upper[k] > 0.0 {
            slot[k] = Some(unstable.len());
            unstable.push(k);
        }
    }
    (slot, unstable)
}

/// Per-ReLU-layer pre-activation bounds for one center and radius.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsCache {
    layers: Vec<LayerBounds>,
}

impl BoundsCache {
    pub fn layers(&self) -> &[LayerBounds] {
        &self.layers
    }

    pub fn unstable_count(&self) -> usize {
        self.layers.iter().map(|l| l.unstable.len()).sum()
    }
}

/// One lower-bound slope per unstable neuron, grouped by ReLU layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaVector(pub Vec<Array1<f64>>);

impl AlphaVector {
    /// Slope 1 where the neuron's upper bound exceeds `|lower|`, else 0.
    pub fn heuristic(cache: &BoundsCache) -> Self {
        AlphaVector(
            cache
                .layers
                .iter()
                .map(|lb| {
                    lb.unstable
                        .iter()
                        .map(|&k| if lb.upper[k] > -lb.lower[k] { 1.0 } else { 0.0 })
                        .collect()
                })
                .collect(),
        )
    }

    pub fn filled(cache: &BoundsCache, value: f64) -> Self {
        AlphaVector(
            cache
                .layers
                .iter()
                .map(|lb| Array1::from_elem(lb.unstable.len(), value))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(Array1::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.0.iter().flat_map(|a| a.iter().copied()).collect()
    }

    /// Overwrites entries from a flat slice laid out as [`Self::to_flat`].
    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        for layer in &mut self.0 {
            for v in layer.iter_mut() {
                *v = *it.next().expect("flat alpha too short");
            }
        }
    }

    pub fn clip(&mut self) {
        for layer in &mut self.0 {
            layer.mapv_inplace(|v| v.clamp(0.0, 1.0));
        }
    }

    fn check(&self, cache: &BoundsCache) -> Result<()> {
        if self.0.len() != cache.layers.len() {
            return Err(Error::dim(cache.layers.len(), self.0.len(), "alpha layer count"));
        }
        for (a, lb) in self.0.iter().zip(&cache.layers) {
            if a.len() != lb.unstable.len() {
                return Err(Error::dim(lb.unstable.len(), a.len(), "alpha per unstable neuron"));
            }
        }
        Ok(())
    }
}

/// `Lᵀ(x + δ) + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearForm {
    pub coeffs: Array1<f64>,
    pub offset: f64,
}

impl LinearForm {
    pub fn new(coeffs: Array1<f64>, offset: f64) -> Self {
        LinearForm { coeffs, offset }
    }

    /// `Lᵀx + b`.
    pub fn center_value(&self, x: ArrayView1<f64>) -> f64 {
        self.coeffs.dot(&x) + self.offset
    }

    /// `Lᵀ(x + δ) + b`.
    pub fn eval(&self, x: ArrayView1<f64>, delta: ArrayView1<f64>) -> f64 {
        self.center_value(x) + self.coeffs.dot(&delta)
    }
}

/// A line `slope·t + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReluLine {
    pub slope: f64,
    pub intercept: f64,
}

impl ReluLine {
    pub fn at(&self, t: f64) -> f64 {
        self.slope * t + self.intercept
    }
}

/// Lower and upper lines enclosing `ReLU` on `[l, u]`.
pub fn relu_relaxation(l: f64, u: f64, alpha: f64) -> Result<(ReluLine, ReluLine)> {
    if l > u {
        return Err(Error::Precondition(format!("relu bounds l={l} > u={u}")));
    }
    let zero = ReluLine {
        slope: 0.0,
        intercept: 0.0,
    };
    let ident = ReluLine {
        slope: 1.0,
        intercept: 0.0,
    };
    Ok(if u <= 0.0 {
        (zero, zero)
    } else if l >= 0.0 {
        (ident, ident)
    } else {
        let (slope, intercept) = chord(l, u);
        (
            ReluLine {
                slope: alpha,
                intercept: 0.0,
            },
            ReluLine { slope, intercept },
        )
    })
}

#[inline]
fn chord(l: f64, u: f64) -> (f64, f64) {
    let slope = u / (u - l);
    (slope, -l * slope)
}

/// `min_{‖δ‖_p ≤ ε} Lᵀ(x + δ) + b = Lᵀx + b − ε‖L‖_q`.
pub fn concretize(form: &LinearForm, x: ArrayView1<f64>, epsilon: f64, norm: Norm) -> Result<f64> {
    check_len(form.coeffs.len(), x.len(), "form vs center")?;
    Ok(form.center_value(x) - epsilon * norm.dual().eval(form.coeffs.view()))
}

/// `max_{‖δ‖_p ≤ ε} Lᵀ(x + δ) + b`.
pub fn concretize_upper(
    form: &LinearForm,
    x: ArrayView1<f64>,
    epsilon: f64,
    norm: Norm,
) -> Result<f64> {
    check_len(form.coeffs.len(), x.len(), "form vs center")?;
    Ok(form.center_value(x) + epsilon * norm.dual().eval(form.coeffs.view()))
}

fn check_len(expected: usize, got: usize, context: &'static str) -> Result<()> {
    if expected != got {
        return Err(Error::dim(expected, got, context));
    }
    Ok(())
}

/// ReLU index for each layer position (None for affine layers).
fn relu_positions(net: &Network) -> Vec<Option<usize>> {
    let mut r = 0;
    net.layers()
        .iter()
        .map(|l| {
            if l.is_relu() {
                r += 1;
                Some(r - 1)
            } else {
                None
            }
        })
        .collect()
}

pub fn preactivation_bounds(
    net: &Network,
    x: ArrayView1<f64>,
    epsilon: f64,
    norm: Norm,
) -> Result<BoundsCache> {
    preactivation_bounds_with(net, x, epsilon, norm, BoundMode::Crown)
}

pub fn preactivation_bounds_with(
    net: &Network,
    x: ArrayView1<f64>,
    epsilon: f64,
    norm: Norm,
    mode: BoundMode,
) -> Result<BoundsCache> {
    check_len(net.input_dim(), x.len(), "network input")?;
    if !(epsilon >= 0.0) {
        return Err(Error::Precondition(format!("negative radius {epsilon}")));
    }
    match mode {
        BoundMode::Crown => crown_bounds(net, x, epsilon, norm),
        BoundMode::Interval => interval_bounds(net, x, epsilon, norm),
    }
}

fn crown_bounds(net: &Network, x: ArrayView1<f64>, epsilon: f64, norm: Norm) -> Result<BoundsCache> {
    let positions = relu_positions(net);
    let dual = norm.dual();
    let mut cache = BoundsCache { layers: Vec::new() };
    for (idx, layer) in net.layers().iter().enumerate() {
        if !layer.is_relu() {
            continue;
        }
        // the affine layer right before this relu produces its pre-activation
        let end = idx - 1;
        let width = match &net.layers()[end] {
            Layer::Affine { weight, .. } => weight.nrows(),
            Layer::Relu => unreachable!("validated ordering"),
        };
        let mut spec = Array2::zeros((2 * width, width));
        for k in 0..width {
            spec[[k, k]] = 1.0;
            spec[[width + k, k]] = -1.0;
        }
        let (lam, bias) = backward_matrix(net, &positions, &cache, end, spec);
        let center = lam.dot(&x) + &bias;
        let mut lower = Array1::zeros(width);
        let mut upper = Array1::zeros(width);
        for k in 0..width {
            let lo = center[k] - epsilon * dual.eval(lam.row(k));
            let hi = -(center[width + k] - epsilon * dual.eval(lam.row(width + k)));
            lower[k] = lo.min(hi);
            upper[k] = lo.max(hi);
        }
        cache.layers.push(LayerBounds::new(lower, upper));
    }
    Ok(cache)
}

/// Backward pass of a matrix of output functionals through `layers[..=end]`
/// using the non-parametric slopes. Returns per-row input coefficients and offsets.
fn backward_matrix(
    net: &Network,
    positions: &[Option<usize>],
    cache: &BoundsCache,
    end: usize,
    mut a: Array2<f64>,
) -> (Array2<f64>, Array1<f64>) {
    let mut bias = Array1::<f64>::zeros(a.nrows());
    for idx in (0..=end).rev() {
        match &net.layers()[idx] {
            Layer::Affine { weight, bias: b } => {
                bias += &a.dot(b);
                a = a.dot(weight);
            }
            Layer::Relu => {
                let lb = &cache.layers[positions[idx].expect("relu position")];
                for (mut row, bias_r) in a.axis_iter_mut(Axis(0)).zip(bias.iter_mut()) {
                    for k in 0..row.len() {
                        let (l, u) = (lb.lower[k], lb.upper[k]);
                        let coef = row[k];
                        if u <= 0.0 {
                            row[k] = 0.0;
                        } else if l >= 0.0 {
                            // identity
                        } else if coef >= 0.0 {
                            let alpha = if u > -l { 1.0 } else { 0.0 };
                            row[k] = alpha * coef;
                        } else {
                            let (slope, intercept) = chord(l, u);
                            row[k] = slope * coef;
                            *bias_r += coef * intercept;
                        }
                    }
                }
            }
        }
    }
    (a, bias)
}

fn interval_bounds(
    net: &Network,
    x: ArrayView1<f64>,
    epsilon: f64,
    norm: Norm,
) -> Result<BoundsCache> {
    let dual = norm.dual();
    let mut cache = BoundsCache { layers: Vec::new() };
    // before the first affine layer the set is a norm ball, not a box
    let mut lo: Option<Array1<f64>> = None;
    let mut hi: Option<Array1<f64>> = None;
    for layer in net.layers() {
        match layer {
            Layer::Affine { weight, bias } => {
                let (new_lo, new_hi) = match (&lo, &hi) {
                    (Some(l), Some(h)) => {
                        let mid = (l + h) / 2.0;
                        let rad = (h - l) / 2.0;
                        let c = weight.dot(&mid) + bias;
                        let r = weight.mapv(f64::abs).dot(&rad);
                        (&c - &r, &c + &r)
                    }
                    _ => {
                        let c = weight.dot(&x) + bias;
                        let r: Array1<f64> =
                            weight.outer_iter().map(|row| epsilon * dual.eval(row)).collect();
                        (&c - &r, &c + &r)
                    }
                };
                lo = Some(new_lo);
                hi = Some(new_hi);
            }
            Layer::Relu => {
                let l = lo.take().expect("affine before relu");
                let h = hi.take().expect("affine before relu");
                lo = Some(l.mapv(|v| v.max(0.0)));
                hi = Some(h.mapv(|v| v.max(0.0)));
                cache.layers.push(LayerBounds::new(l, h));
            }
        }
    }
    Ok(cache)
}

/// Coefficient vector entering each layer during the backward pass, indexed by
/// layer position; used to replay the pass in reverse for gradients.
struct Trace {
    entering: Vec<Array1<f64>>,
}

fn backward_traced(
    net: &Network,
    cache: &BoundsCache,
    c: ArrayView1<f64>,
    alpha: &AlphaVector,
) -> Result<(LinearForm, Trace)> {
    check_len(net.output_dim(), c.len(), "clause vector")?;
    if cache.layers.len() != net.relu_count() {
        return Err(Error::dim(net.relu_count(), cache.layers.len(), "cache relu layers"));
    }
    alpha.check(cache)?;
    let positions = relu_positions(net);
    let mut a = c.to_owned();
    let mut offset = 0.0;
    let mut entering = vec![Array1::zeros(0); net.layers().len()];
    for idx in (0..net.layers().len()).rev() {
        match &net.layers()[idx] {
            Layer::Affine { weight, bias } => {
                offset += a.dot(bias);
                let next = weight.t().dot(&a);
                entering[idx] = std::mem::replace(&mut a, next);
            }
            Layer::Relu => {
                let r = positions[idx].expect("relu position");
                let lb = &cache.layers[r];
                let al = &alpha.0[r];
                let mut next = a.clone();
                for k in 0..a.len() {
                    let (l, u) = (lb.lower[k], lb.upper[k]);
                    let coef = a[k];
                    if u <= 0.0 {
                        next[k] = 0.0;
                    } else if l >= 0.0 {
                    } else if coef >= 0.0 {
                        next[k] = al[lb.slot[k].expect("unstable slot")] * coef;
                    } else {
                        let (slope, intercept) = chord(l, u);
                        next[k] = slope * coef;
                        offset += coef * intercept;
                    }
                }
                entering[idx] = std::mem::replace(&mut a, next);
            }
        }
    }
    Ok((LinearForm::new(a, offset), Trace { entering }))
}

/// Sound linear lower bound on `cᵀN(x + δ)` over the cache's ball.
pub fn backward_linear_bound(
    net: &Network,
    cache: &BoundsCache,
    c: ArrayView1<f64>,
    alpha: &AlphaVector,
) -> Result<LinearForm> {
    backward_traced(net, cache, c, alpha).map(|(form, _)| form)
}

/// Smallest `|coefficient|` reaching an unstable ReLU during the backward
/// pass (`inf` when none): the distance to a switch of relaxation line.
pub fn selection_margin(
    net: &Network,
    cache: &BoundsCache,
    c: ArrayView1<f64>,
    alpha: &AlphaVector,
) -> Result<f64> {
    let (_, trace) = backward_traced(net, cache, c, alpha)?;
    let positions = relu_positions(net);
    let mut margin = f64::INFINITY;
    for (idx, layer) in net.layers().iter().enumerate() {
        if layer.is_relu() {
            let lb = &cache.layers[positions[idx].expect("relu position")];
            for &k in lb.unstable() {
                margin = margin.min(trace.entering[idx][k].abs());
            }
        }
    }
    Ok(margin)
}

/// Vector-Jacobian product of the backward pass: given adjoints of the output
/// form's coefficients and offset, returns the gradient with respect to `alpha`.
/// Line selection is held fixed at the evaluation point.
pub fn backward_vjp(
    net: &Network,
    cache: &BoundsCache,
    c: ArrayView1<f64>,
    alpha: &AlphaVector,
    adj_coeffs: ArrayView1<f64>,
    adj_offset: f64,
) -> Result<(LinearForm, AlphaVector)> {
    let (form, trace) = backward_traced(net, cache, c, alpha)?;
    check_len(net.input_dim(), adj_coeffs.len(), "coefficient adjoint")?;
    let positions = relu_positions(net);
    let mut grad = AlphaVector::filled(cache, 0.0);
    let mut g = adj_coeffs.to_owned();
    for (idx, layer) in net.layers().iter().enumerate() {
        let a_in = &trace.entering[idx];
        g = match layer {
            Layer::Affine { weight, bias } => weight.dot(&g) + adj_offset * bias,
            Layer::Relu => {
                let r = positions[idx].expect("relu position");
                let lb = &cache.layers[r];
                let al = &alpha.0[r];
                let mut prev = Array1::zeros(g.len());
                for k in 0..g.len() {
                    let (l, u) = (lb.lower[k], lb.upper[k]);
                    prev[k] = if u <= 0.0 {
                        0.0
                    } else if l >= 0.0 {
                        g[k]
                    } else if a_in[k] >= 0.0 {
                        let slot = lb.slot[k].expect("unstable slot");
                        grad.0[r][slot] += g[k] * a_in[k];
                        al[slot] * g[k]
                    } else {
                        let (slope, intercept) = chord(l, u);
                        slope * g[k] + adj_offset * intercept
                    };
                }
                prev
            }
        };
    }
    Ok((form, grad))
}

/// Gradient of `concretize(backward_linear_bound(..))` with respect to `alpha`.
#[allow(clippy::too_many_arguments)]
pub fn bound_gradient(
    net: &Network,
    cache: &BoundsCache,
    c: ArrayView1<f64>,
    alpha: &AlphaVector,
    x: ArrayView1<f64>,
    epsilon: f64,
    norm: Norm,
) -> Result<(f64, AlphaVector)> {
    let form = backward_linear_bound(net, cache, c, alpha)?;
    let value = concretize(&form, x, epsilon, norm)?;
    let adj = &x - &(epsilon * norm.dual().subgradient(form.coeffs.view()));
    let (_, grad) = backward_vjp(net, cache, c, alpha, adj.view(), 1.0)?;
    Ok((value, grad))
}
