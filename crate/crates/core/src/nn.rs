//! Dense multilayer perceptrons with manual backpropagation, Adam and
//! feature standardisation.
//!
//! Parameters are stored in one flat vector, layer by layer, each layer as a
//! row-major `out x in` weight matrix followed by its bias.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::FeatureKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    /// Layer inputs; `inputs[0]` is the network input.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    /// Inverted-dropout multipliers applied to each hidden layer output.
    masks: Vec<Option<Vec<f64>>>,
    pub output: Vec<f64>,
}

impl Mlp {
    /// Builds a network with He-style initialisation. `activations` has one
    /// entry per layer (`sizes.len() - 1`).
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        let mut net = Mlp::zeros(sizes, activations)?;
        let mut off = 0;
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let std = match activations[l] {
                Activation::Relu => (2.0 / fan_in as f64).sqrt(),
                _ => (1.0 / fan_in as f64).sqrt(),
            };
            let normal = Normal::new(0.0, std).expect("positive std");
            for w in &mut net.params[off..off + fan_in * fan_out] {
                *w = normal.sample(rng);
            }
            off += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        if activations.len() != sizes.len() - 1 {
            return Err(Error::Dimension {
                expected: sizes.len() - 1,
                got: activations.len(),
            });
        }
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Mlp {
            sizes: sizes.to_vec(),
            activations: activations.to_vec(),
            params: vec![0.0; n],
        })
    }

    /// Hidden layers with `hidden` activation and a final identity layer.
    pub fn standard<R: Rng + ?Sized>(
        input: usize,
        hidden_sizes: &[usize],
        output: usize,
        hidden: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden_sizes);
        sizes.push(output);
        let mut acts = vec![hidden; hidden_sizes.len()];
        acts.push(Activation::Identity);
        Mlp::new(&sizes, &acts, rng)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.params.len() {
            return Err(Error::Dimension {
                expected: self.params.len(),
                got: p.len(),
            });
        }
        self.params.copy_from_slice(p);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Sets one layer's weights and bias directly.
    pub fn set_layer(&mut self, layer: usize, weights: &[f64], bias: &[f64]) -> Result<()> {
        let (fi, fo) = (self.sizes[layer], self.sizes[layer + 1]);
        if weights.len() != fi * fo || bias.len() != fo {
            return Err(Error::Dimension {
                expected: fi * fo + fo,
                got: weights.len() + bias.len(),
            });
        }
        let off = self.layer_offset(layer);
        self.params[off..off + fi * fo].copy_from_slice(weights);
        self.params[off + fi * fo..off + fi * fo + fo].copy_from_slice(bias);
        Ok(())
    }

    fn layer_offset(&self, layer: usize) -> usize {
        self.sizes[..layer + 1].windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut off = 0;
        for l in 0..self.sizes.len() - 1 {
            let (fi, fo) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + fi * fo];
            let b = &self.params[off + fi * fo..off + fi * fo + fo];
            let act = self.activations[l];
            cur = (0..fo)
                .map(|o| act.apply(dot(&w[o * fi..(o + 1) * fi], &cur) + b[o]))
                .collect();
            off += fi * fo + fo;
        }
        Ok(cur)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        self.forward_impl(x, 0.0, None::<&mut rand_chacha::ChaCha8Rng>)
    }

    /// Forward pass with inverted dropout on every hidden layer output.
    pub fn forward_dropout<R: Rng + ?Sized>(&self, x: &[f64], rate: f64, rng: &mut R) -> Result<ForwardCache> {
        self.forward_impl(x, rate, Some(rng))
    }

    fn forward_impl<R: Rng + ?Sized>(&self, x: &[f64], rate: f64, mut rng: Option<&mut R>) -> Result<ForwardCache> {
        self.check_input(x)?;
        let n_layers = self.sizes.len() - 1;
        let mut inputs = Vec::with_capacity(n_layers + 1);
        let mut pre = Vec::with_capacity(n_layers);
        let mut masks = Vec::with_capacity(n_layers);
        inputs.push(x.to_vec());
        let mut off = 0;
        for l in 0..n_layers {
            let (fi, fo) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + fi * fo];
            let b = &self.params[off + fi * fo..off + fi * fo + fo];
            let input = &inputs[l];
            let z: Vec<f64> = (0..fo).map(|o| dot(&w[o * fi..(o + 1) * fi], input) + b[o]).collect();
            let act = self.activations[l];
            let mut y: Vec<f64> = z.iter().map(|v| act.apply(*v)).collect();
            let mask = match rng.as_deref_mut() {
                Some(r) if rate > 0.0 && l + 1 < n_layers => {
                    let keep = 1.0 - rate;
                    let m: Vec<f64> = (0..fo)
                        .map(|_| if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    for (v, m) in y.iter_mut().zip(&m) {
                        *v *= m;
                    }
                    Some(m)
                }
                _ => None,
            };
            pre.push(z);
            masks.push(mask);
            inputs.push(y);
            off += fi * fo + fo;
        }
        let output = inputs.pop().expect("output layer");
        Ok(ForwardCache {
            inputs,
            pre,
            masks,
            output,
        })
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`
    /// and returns `d loss / d input`.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.output_dim() {
            return Err(Error::Dimension {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        if grad.len() != self.params.len() {
            return Err(Error::Dimension {
                expected: self.params.len(),
                got: grad.len(),
            });
        }
        let n_layers = self.sizes.len() - 1;
        if cache.pre.len() != n_layers || cache.inputs.len() != n_layers {
            return Err(Error::Invariant("forward cache does not belong to this network".into()));
        }
        let mut delta = upstream.to_vec();
        let mut off_end = self.params.len();
        for l in (0..n_layers).rev() {
            let (fi, fo) = (self.sizes[l], self.sizes[l + 1]);
            let off = off_end - (fi * fo + fo);
            let act = self.activations[l];
            let z = &cache.pre[l];
            let y_out = if l + 1 == n_layers { &cache.output } else { &cache.inputs[l + 1] };
            // dL/dz = dL/dy * (mask) * act'(z)
            for o in 0..fo {
                let m = cache.masks[l].as_ref().map_or(1.0, |m| m[o]);
                let y = if m != 0.0 { y_out[o] / m } else { act.apply(z[o]) };
                delta[o] *= m * act.derivative(z[o], y);
            }
            let input = &cache.inputs[l];
            let (gw, gb) = grad[off..off + fi * fo + fo].split_at_mut(fi * fo);
            for o in 0..fo {
                let d = delta[o];
                if d != 0.0 {
                    for (g, x) in gw[o * fi..(o + 1) * fi].iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
                gb[o] += d;
            }
            let w = &self.params[off..off + fi * fo];
            let mut next = vec![0.0; fi];
            for o in 0..fo {
                let d = delta[o];
                if d != 0.0 {
                    for (n, wv) in next.iter_mut().zip(&w[o * fi..(o + 1) * fi]) {
                        *n += d * wv;
                    }
                }
            }
            delta = next;
            off_end = off;
        }
        Ok(delta)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.sizes[0] {
            return Err(Error::Dimension {
                expected: self.sizes[0],
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `self = rho * self + (1 - rho) * other`.
    pub fn polyak_from(&mut self, other: &Mlp, rho: f64) {
        for (t, s) in self.params.iter_mut().zip(&other.params) {
            *t = rho * *t + (1.0 - rho) * s;
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Data(format!("serialising network: {e}")))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let net: Mlp = serde_json::from_str(s).map_err(|e| Error::Data(format!("parsing network: {e}")))?;
        let expected: usize = net.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if net.sizes.len() < 2 || net.activations.len() != net.sizes.len() - 1 || net.params.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: net.params.len(),
            });
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Mlp::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension {
                expected: self.m.len(),
                got: params.len().min(grads.len()),
            });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Per-feature standardisation; currency features are `log1p`-transformed
/// first (negative values are clamped to zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub kinds: Vec<FeatureKind>,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureScaler {
    pub fn identity(kinds: Vec<FeatureKind>) -> Self {
        let n = kinds.len();
        FeatureScaler {
            kinds,
            shift: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    pub fn fit<'a, I>(kinds: Vec<FeatureKind>, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let d = kinds.len();
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let mut n = 0usize;
        for row in rows {
            if row.len() != d {
                return Err(Error::Dimension { expected: d, got: row.len() });
            }
            for k in 0..d {
                let v = pre_transform(kinds[k], row[k]);
                sum[k] += v;
                sq[k] += v * v;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Data("cannot fit a scaler on zero rows".into()));
        }
        let nf = n as f64;
        let shift: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let scale = sq
            .iter()
            .zip(&shift)
            .map(|(q, m)| {
                let var = (q / nf - m * m).max(0.0);
                if var.sqrt() > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(FeatureScaler { kinds, shift, scale })
    }

    pub fn dim(&self) -> usize {
        self.kinds.len()
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(k, v)| (pre_transform(self.kinds[k], *v) - self.shift[k]) / self.scale[k])
            .collect()
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(k, v)| {
                let u = v * self.scale[k] + self.shift[k];
                match self.kinds[k] {
                    FeatureKind::Plain => u,
                    FeatureKind::Currency => u.exp_m1(),
                }
            })
            .collect()
    }
}

fn pre_transform(kind: FeatureKind, v: f64) -> f64 {
    match kind {
        FeatureKind::Plain => v,
        FeatureKind::Currency => v.max(0.0).ln_1p(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub worst_relative_error: f64,
    pub worst_index: usize,
    pub n_checked: usize,
    pub passed: bool,
}

/// Compares analytic parameter gradients of `loss(net(x))` with central
/// differences (step `1e-5`). `loss` returns the loss and its gradient
/// with respect to the network output.
pub fn grad_check<F>(net: &Mlp, x: &[f64], loss: F, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let cache = net.forward_cached(x)?;
    let (_, upstream) = loss(&cache.output);
    let mut analytic = vec![0.0; net.n_params()];
    net.backward(&cache, &upstream, &mut analytic)?;
    let h = 1e-5;
    let mut probe = net.clone();
    let mut worst = 0.0_f64;
    let mut worst_index = 0;
    for i in 0..net.n_params() {
        let orig = probe.params[i];
        probe.params[i] = orig + h;
        let up = loss(&probe.forward(x)?).0;
        probe.params[i] = orig - h;
        let down = loss(&probe.forward(x)?).0;
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-6);
        let rel = (analytic[i] - numeric).abs() / scale;
        if rel > worst {
            worst = rel;
            worst_index = i;
        }
    }
    Ok(GradCheckReport {
        worst_relative_error: worst,
        worst_index,
        n_checked: net.n_params(),
        passed: worst < tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input() {
        let mut net = Mlp::zeros(&[2, 2], &[Activation::Identity]).unwrap();
        net.set_layer(0, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(net.forward(&[3.0, -4.0]).unwrap(), vec![3.0, -4.0]);
    }

    #[test]
    fn zero_weights_give_activation_of_bias() {
        let mut net = Mlp::zeros(&[3, 2], &[Activation::Tanh]).unwrap();
        net.set_layer(0, &[0.0; 6], &[0.5, -2.0]).unwrap();
        let y = net.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y, vec![0.5f64.tanh(), (-2.0f64).tanh()]);
    }

    #[test]
    fn dimension_mismatch() {
        let net = Mlp::zeros(&[3, 1], &[Activation::Identity]).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Dimension { expected: 3, got: 1 })));
    }

    #[test]
    fn linear_squared_loss_gradient() {
        let mut net = Mlp::zeros(&[2, 1], &[Activation::Identity]).unwrap();
        net.set_layer(0, &[0.3, -0.2], &[0.1]).unwrap();
        let x = [1.5, 2.0];
        let y = 4.0;
        let cache = net.forward_cached(&x).unwrap();
        let yhat = cache.output[0];
        let mut g = vec![0.0; 3];
        net.backward(&cache, &[2.0 * (yhat - y)], &mut g).unwrap();
        let e = 2.0 * (yhat - y);
        assert!((g[0] - e * x[0]).abs() < 1e-12);
        assert!((g[1] - e * x[1]).abs() < 1e-12);
        assert!((g[2] - e).abs() < 1e-12);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::standard(3, &[4], 2, Activation::Tanh, &mut rng).unwrap();
        let cache = net.forward_cached(&[0.1, 0.2, 0.3]).unwrap();
        let mut g = vec![0.0; net.n_params()];
        net.backward(&cache, &[0.0, 0.0], &mut g).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn adam_zero_gradient_is_noop_and_first_step_is_lr() {
        let mut p = vec![1.0, -2.0];
        let mut adam = Adam::new(2, 0.01);
        adam.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        let mut adam = Adam::new(2, 0.01);
        adam.step(&mut p, &[0.5, -3.0]).unwrap();
        // Bias-corrected first step moves each parameter by lr * g / (|g| + eps).
        assert!((p[0] - (1.0 - 0.01 * 0.5 / (0.5 + 1e-8))).abs() < 1e-12);
        assert!((p[1] - (-2.0 + 0.01 * 3.0 / (3.0 + 1e-8))).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Mlp::standard(4, &[5, 3], 2, Activation::Relu, &mut rng).unwrap();
        let back = Mlp::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(net, back);
    }
}
