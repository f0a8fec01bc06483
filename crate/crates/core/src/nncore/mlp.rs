//! Fully connected networks with hand-wired backpropagation.
//!
//! A layer computes `y = act(x Wᵀ + b)` for a `batch × in` input, with `W`
//! stored row-major as `out × in`. Matrix products go through
//! `matrixmultiply::dgemm`, single-threaded, so a forward pass is a
//! deterministic function of its inputs.

use crate::error::{Error, Result};
use crate::nncore::rng::{RandomStream, Rng};
use crate::nncore::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Sigmoid),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(Activation::Identity),
            "tanh" => Some(Activation::Tanh),
            "sigmoid" => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Layer widths and per-layer activations. `widths` has one more entry than
/// `activations`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    widths: Vec<usize>,
    activations: Vec<Activation>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if widths.len() < 2 || activations.len() != widths.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "an MLP needs at least one layer and one activation per layer \
                 (widths {widths:?}, {} activations)",
                activations.len()
            )));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer widths must be positive: {widths:?}"
            )));
        }
        Ok(Self {
            widths,
            activations,
        })
    }

    /// `input → hidden… → output`, with `hidden_act` on hidden layers and
    /// `output_act` on the last one.
    pub fn stack(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_act: Activation,
        output_act: Activation,
    ) -> Result<Self> {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(output);
        let mut activations = vec![hidden_act; hidden.len()];
        activations.push(output_act);
        Self::new(widths, activations)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.activations.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `out × in`, row-major.
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Weights and biases for every layer. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<LayerParams>,
}

impl MlpParams {
    pub fn zeros(spec: &MlpSpec) -> Self {
        let layers = spec
            .widths
            .windows(2)
            .map(|w| LayerParams {
                weight: Tensor::zeros(&[w[1], w[0]]),
                bias: vec![0.0; w[1]],
            })
            .collect();
        Self { layers }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(spec: &MlpSpec, rng: &mut Rng) -> Self {
        let mut params = Self::zeros(spec);
        for layer in &mut params.layers {
            let fan_in = layer.in_dim() as f64;
            let fan_out = layer.out_dim() as f64;
            let limit = (6.0 / (fan_in + fan_out)).sqrt();
            for w in layer.weight.data_mut() {
                *w = (2.0 * rng.uniform() - 1.0) * limit;
            }
        }
        params
    }

    pub fn matches(&self, spec: &MlpSpec) -> bool {
        self.layers.len() == spec.num_layers()
            && self
                .layers
                .iter()
                .zip(spec.widths.windows(2))
                .all(|(l, w)| l.weight.shape() == [w[1], w[0]] && l.bias.len() == w[1])
    }

    pub fn scale(&mut self, c: f64) {
        self.for_each_slice_mut(&mut |s| s.iter_mut().for_each(|v| *v *= c));
    }

    pub fn add_assign(&mut self, other: &MlpParams) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.data_mut().iter_mut().zip(b.weight.data()) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }
}

/// A fixed, ordered collection of trainable scalars.
///
/// The visiting order defines the flat layout used by the optimizer, the
/// finite-difference oracle and the checkpoint writer.
pub trait Parameters {
    fn for_each_slice(&self, f: &mut dyn FnMut(&[f64]));
    fn for_each_slice_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.for_each_slice(&mut |s| n += s.len());
        n
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.for_each_slice(&mut |s| out.extend_from_slice(s));
        out
    }

    fn copy_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::Dimension(format!(
                "flat parameter vector has {} entries, expected {n}",
                flat.len()
            )));
        }
        let mut offset = 0;
        self.for_each_slice_mut(&mut |s| {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        });
        Ok(())
    }
}

impl Parameters for MlpParams {
    fn for_each_slice(&self, f: &mut dyn FnMut(&[f64])) {
        for l in &self.layers {
            f(l.weight.data());
            f(&l.bias);
        }
    }

    fn for_each_slice_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for l in &mut self.layers {
            f(l.weight.data_mut());
            f(&mut l.bias);
        }
    }
}

/// Everything backward needs from a forward pass: the network input and each
/// layer's post-activation output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    outputs: Vec<Tensor>,
}

impl ForwardCache {
    pub fn input(&self) -> &Tensor {
        &self.outputs[0]
    }

    pub fn output(&self) -> &Tensor {
        self.outputs.last().unwrap()
    }

    pub fn batch(&self) -> usize {
        self.outputs[0].rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: MlpParams,
}

impl Mlp {
    pub fn new(spec: MlpSpec, params: MlpParams) -> Result<Self> {
        if !params.matches(&spec) {
            return Err(Error::Dimension(
                "parameter shapes do not match the network spec".into(),
            ));
        }
        Ok(Self { spec, params })
    }

    pub fn glorot(spec: MlpSpec, rng: &mut Rng) -> Self {
        let params = MlpParams::glorot(&spec, rng);
        Self { spec, params }
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    /// Forward pass without keeping intermediates.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (layer, &act) in self.params.layers.iter().zip(&self.spec.activations) {
            h = layer_forward(layer, act, &h);
        }
        Ok(h)
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.check_input(x)?;
        let mut outputs = Vec::with_capacity(self.params.layers.len() + 1);
        outputs.push(x.clone());
        for (layer, &act) in self.params.layers.iter().zip(&self.spec.activations) {
            let next = layer_forward(layer, act, outputs.last().unwrap());
            outputs.push(next);
        }
        let y = outputs.last().unwrap().clone();
        Ok((y, ForwardCache { outputs }))
    }

    /// Returns `(∂L/∂x, ∂L/∂params)` given `dy = ∂L/∂y`.
    pub fn backward(&self, cache: &ForwardCache, dy: &Tensor) -> Result<(Tensor, MlpParams)> {
        let batch = cache.batch();
        if dy.shape() != [batch, self.output_dim()] {
            return Err(Error::Dimension(format!(
                "output gradient has shape {:?}, expected [{batch}, {}]",
                dy.shape(),
                self.output_dim()
            )));
        }
        if cache.outputs.len() != self.params.layers.len() + 1 {
            return Err(Error::Dimension(
                "cache does not belong to this network".into(),
            ));
        }
        let mut grads = MlpParams::zeros(&self.spec);
        let mut delta = dy.clone();
        for li in (0..self.params.layers.len()).rev() {
            let layer = &self.params.layers[li];
            let act = self.spec.activations[li];
            let out = &cache.outputs[li + 1];
            let inp = &cache.outputs[li];
            if act != Activation::Identity {
                for (d, &y) in delta.data_mut().iter_mut().zip(out.data()) {
                    *d *= act.derivative_from_output(y);
                }
            }
            let (n_out, n_in) = (layer.out_dim(), layer.in_dim());
            let g = &mut grads.layers[li];
            // dW = deltaᵀ · input
            gemm(
                n_out,
                batch,
                n_in,
                delta.data(),
                (1, n_out as isize),
                inp.data(),
                (n_in as isize, 1),
                g.weight.data_mut(),
            );
            for row in delta.iter_rows() {
                for (b, d) in g.bias.iter_mut().zip(row) {
                    *b += d;
                }
            }
            // dx = delta · W
            let mut dx = Tensor::zeros(&[batch, n_in]);
            gemm(
                batch,
                n_out,
                n_in,
                delta.data(),
                (n_out as isize, 1),
                layer.weight.data(),
                (n_in as isize, 1),
                dx.data_mut(),
            );
            delta = dx;
        }
        Ok((delta, grads))
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        x.ensure_cols(self.input_dim(), "network input")
    }
}

fn layer_forward(layer: &LayerParams, act: Activation, x: &Tensor) -> Tensor {
    let batch = x.rows();
    let (n_out, n_in) = (layer.out_dim(), layer.in_dim());
    let mut y = Tensor::zeros(&[batch, n_out]);
    for row in y.data_mut().chunks_exact_mut(n_out) {
        row.copy_from_slice(&layer.bias);
    }
    // y += x · Wᵀ
    gemm_acc(
        batch,
        n_in,
        n_out,
        x.data(),
        (n_in as isize, 1),
        layer.weight.data(),
        (1, n_in as isize),
        y.data_mut(),
    );
    if act != Activation::Identity {
        for v in y.data_mut() {
            *v = act.apply(*v);
        }
    }
    y
}

/// `c = a · b` where `a` is `m × k`, `b` is `k × n`, `c` is row-major `m × n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
) {
    gemm_impl(m, k, n, a, a_strides, b, b_strides, 0.0, c)
}

/// `c += a · b`.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
) {
    gemm_impl(m, k, n, a, a_strides, b, b_strides, 1.0, c)
}

#[allow(clippy::too_many_arguments)]
fn gemm_impl(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() == m * n);
    // SAFETY: the asserts above bound every index the strides can reach, since
    // each operand is a dense matrix laid out with exactly these strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::gradcheck::{fd_gradient_flat, max_relative_error};

    fn single_layer(w: Vec<f64>, b: Vec<f64>, n_in: usize, act: Activation) -> Mlp {
        let n_out = b.len();
        let spec = MlpSpec::new(vec![n_in, n_out], vec![act]).unwrap();
        let params = MlpParams {
            layers: vec![LayerParams {
                weight: Tensor::matrix(n_out, n_in, w).unwrap(),
                bias: b,
            }],
        };
        Mlp::new(spec, params).unwrap()
    }

    #[test]
    fn zero_weights_give_activated_bias() {
        let net = single_layer(vec![0.0; 6], vec![0.3, -1.0], 3, Activation::Tanh);
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![-4.0, 0.5, 9.0]]).unwrap();
        let y = net.apply(&x).unwrap();
        for row in y.iter_rows() {
            assert_eq!(row, &[0.3f64.tanh(), (-1.0f64).tanh()]);
        }
    }

    #[test]
    fn identity_layer_is_identity() {
        let net = single_layer(
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            vec![0.0; 3],
            3,
            Activation::Identity,
        );
        let x = Tensor::from_rows(&[vec![1.5, -2.0, 3.25], vec![0.0, 7.0, -1.0]]).unwrap();
        assert_eq!(net.apply(&x).unwrap(), x);
    }

    #[test]
    fn scalar_tanh() {
        let net = single_layer(vec![1.0], vec![0.0], 1, Activation::Tanh);
        let y = net
            .apply(&Tensor::matrix(1, 1, vec![0.5]).unwrap())
            .unwrap();
        assert!((y.data()[0] - 0.4621171573).abs() < 1e-10);
    }

    #[test]
    fn input_width_checked() {
        let net = single_layer(vec![1.0, 1.0], vec![0.0], 2, Activation::Identity);
        let x = Tensor::matrix(1, 3, vec![0.0; 3]).unwrap();
        assert!(matches!(net.apply(&x), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_upstream_gradient() {
        let spec = MlpSpec::stack(3, &[4], 2, Activation::Tanh, Activation::Sigmoid).unwrap();
        let net = Mlp::glorot(spec, &mut Rng::new(1));
        let x = Tensor::from_rows(&[vec![0.1, 0.2, 0.3]]).unwrap();
        let (_, cache) = net.forward(&x).unwrap();
        let (dx, grads) = net.backward(&cache, &Tensor::zeros(&[1, 2])).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(grads.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_sum_gradient() {
        // L = sum(y), y = x Wᵀ + b  ⇒  dW[o][i] = Σ_batch x[i], db[o] = batch.
        let net = single_layer(
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0],
            2,
            Activation::Identity,
        );
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, -5.0], vec![0.5, 0.5]]).unwrap();
        let (_, cache) = net.forward(&x).unwrap();
        let dy = Tensor::matrix(3, 2, vec![1.0; 6]).unwrap();
        let (dx, g) = net.backward(&cache, &dy).unwrap();
        assert_eq!(g.layers[0].weight.data(), &[4.5, -2.5, 4.5, -2.5]);
        assert_eq!(g.layers[0].bias, vec![3.0, 3.0]);
        assert_eq!(dx.data(), &[1.0; 6]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(11);
        for (hidden, out_act) in [
            (vec![5, 4], Activation::Sigmoid),
            (vec![6], Activation::Identity),
            (vec![], Activation::Tanh),
        ] {
            let spec = MlpSpec::stack(3, &hidden, 2, Activation::Tanh, out_act).unwrap();
            let net = Mlp::glorot(spec.clone(), &mut rng);
            let x = Tensor::matrix(4, 3, (0..12).map(|_| rng.standard_normal()).collect()).unwrap();
            let target: Vec<f64> = (0..8).map(|_| rng.standard_normal()).collect();
            let loss = |p: &MlpParams, x: &Tensor| -> f64 {
                let net = Mlp::new(spec.clone(), p.clone()).unwrap();
                let y = net.apply(x).unwrap();
                y.data()
                    .iter()
                    .zip(&target)
                    .map(|(a, t)| 0.5 * (a - t).powi(2))
                    .sum()
            };
            let (y, cache) = net.forward(&x).unwrap();
            let dy = Tensor::matrix(
                4,
                2,
                y.data().iter().zip(&target).map(|(a, t)| a - t).collect(),
            )
            .unwrap();
            let (dx, grads) = net.backward(&cache, &dy).unwrap();

            let numeric = fd_gradient_flat(
                |flat| {
                    let mut p = net.params.clone();
                    p.copy_from_flat(flat).unwrap();
                    loss(&p, &x)
                },
                &net.params.to_flat(),
                1e-5,
            );
            assert!(max_relative_error(&grads.to_flat(), &numeric) < 1e-5);

            let numeric_dx = fd_gradient_flat(
                |flat| loss(&net.params, &Tensor::matrix(4, 3, flat.to_vec()).unwrap()),
                x.data(),
                1e-5,
            );
            assert!(max_relative_error(dx.data(), &numeric_dx) < 1e-5);
        }
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let spec = MlpSpec::stack(7, &[16, 16], 3, Activation::Tanh, Activation::Identity).unwrap();
        let net = Mlp::glorot(spec, &mut Rng::new(2));
        let mut rng = Rng::new(3);
        let x = Tensor::matrix(9, 7, (0..63).map(|_| rng.standard_normal()).collect()).unwrap();
        let a = net.apply(&x).unwrap();
        let (b, _) = net.forward(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn glorot_bounds() {
        let spec = MlpSpec::stack(10, &[30], 5, Activation::Tanh, Activation::Identity).unwrap();
        let p = MlpParams::glorot(&spec, &mut Rng::new(4));
        let limit0 = (6.0f64 / 40.0).sqrt();
        assert!(p.layers[0].weight.data().iter().all(|w| w.abs() <= limit0));
        assert!(p.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }
}
