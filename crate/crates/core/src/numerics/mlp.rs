use serde::{Deserialize, Serialize};

use super::{DenseMatrix, NumericsError, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => tanh(x),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

/// `tanh` through one `exp`, about twice as fast as the libm routine and
/// within a few ulp of it; a short series covers tiny arguments where the
/// quotient would cancel.
#[inline]
pub(crate) fn tanh(x: f64) -> f64 {
    let a = x.abs();
    if a < 1e-3 {
        let x2 = x * x;
        return x * (1.0 - x2 * (1.0 / 3.0 - x2 * (2.0 / 15.0)));
    }
    let e = (-2.0 * a).exp();
    let t = (1.0 - e) / (1.0 + e);
    t.copysign(x)
}

/// Fully connected network `x -> act(x W₁ + b₁) -> ... -> x Wₖ + bₖ`.
///
/// Rows of the input batch are samples. Weight matrix `l` has shape
/// `widths[l] x widths[l + 1]`. Hidden layers use `hidden`, the output layer
/// uses `output` (identity by default).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    weights: Vec<DenseMatrix>,
    biases: Vec<Vec<f64>>,
    hidden: Activation,
    output: Activation,
}

/// Parameter gradients, laid out like the owning [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<DenseMatrix>,
    pub biases: Vec<Vec<f64>>,
}

/// Activations saved by [`Mlp::forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// `layers[0]` is the input, `layers[l]` the output of layer `l`.
    layers: Vec<DenseMatrix>,
}

impl MlpCache {
    pub fn output(&self) -> &DenseMatrix {
        self.layers.last().expect("cache holds at least the input")
    }
}

impl Mlp {
    fn check_widths(widths: &[usize]) -> Result<(), NumericsError> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(NumericsError::Shape(format!(
                "an MLP needs at least two non-zero layer widths, got {widths:?}"
            )));
        }
        Ok(())
    }

    /// PyTorch-style initialisation: weights and biases uniform in
    /// `±1/√fan_in`.
    pub fn new(widths: &[usize], hidden: Activation, rng: &mut SeededRng) -> Result<Self, NumericsError> {
        Self::check_widths(widths)?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in widths.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            weights.push(DenseMatrix::from_fn(w[0], w[1], |_, _| rng.uniform(-bound, bound)));
            biases.push((0..w[1]).map(|_| rng.uniform(-bound, bound)).collect());
        }
        Ok(Self {
            widths: widths.to_vec(),
            weights,
            biases,
            hidden,
            output: Activation::Identity,
        })
    }

    /// Weights drawn from `N(0, std²)`, zero biases.
    pub fn gaussian(widths: &[usize], hidden: Activation, std: f64, rng: &mut SeededRng) -> Result<Self, NumericsError> {
        Self::check_widths(widths)?;
        let weights = widths
            .windows(2)
            .map(|w| DenseMatrix::from_fn(w[0], w[1], |_, _| std * rng.normal()))
            .collect();
        let biases = widths[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            widths: widths.to_vec(),
            weights,
            biases,
            hidden,
            output: Activation::Identity,
        })
    }

    /// Builds a network from explicit parameters.
    pub fn from_parts(
        weights: Vec<DenseMatrix>,
        biases: Vec<Vec<f64>>,
        hidden: Activation,
        output: Activation,
    ) -> Result<Self, NumericsError> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(NumericsError::Shape("weights and biases must pair up".into()));
        }
        let mut widths = vec![weights[0].rows()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.rows() != widths[l] || b.len() != w.cols() {
                return Err(NumericsError::Shape(format!("layer {l} dimensions are incompatible")));
            }
            if !w.is_finite() || b.iter().any(|v| !v.is_finite()) {
                return Err(NumericsError::NonFinite(format!("layer {l} parameters")));
            }
            widths.push(w.cols());
        }
        Self::check_widths(&widths)?;
        Ok(Self {
            widths,
            weights,
            biases,
            hidden,
            output,
        })
    }

    pub fn with_output_activation(mut self, output: Activation) -> Self {
        self.output = output;
        self
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn weights(&self) -> &[DenseMatrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    fn activation_for(&self, layer: usize) -> Activation {
        if layer + 1 == self.weights.len() {
            self.output
        } else {
            self.hidden
        }
    }

    fn check_input(&self, x: &DenseMatrix) -> Result<(), NumericsError> {
        if x.cols() != self.input_width() {
            return Err(NumericsError::Shape(format!(
                "MLP expects {} input columns, got {}",
                self.input_width(),
                x.cols()
            )));
        }
        Ok(())
    }

    fn layer_forward(&self, l: usize, x: &DenseMatrix) -> DenseMatrix {
        let mut z = x.matmul_unchecked(&self.weights[l]);
        let act = self.activation_for(l);
        let b = &self.biases[l];
        for i in 0..z.rows() {
            for (v, bias) in z.row_mut(i).iter_mut().zip(b) {
                *v = act.apply(*v + bias);
            }
        }
        z
    }

    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix, NumericsError> {
        self.check_input(x)?;
        if self.is_scalar_single_hidden() {
            let mut cache = self.scalar_forward_cached(x);
            return Ok(cache.layers.pop().expect("output layer"));
        }
        let mut h = self.layer_forward(0, x);
        for l in 1..self.weights.len() {
            h = self.layer_forward(l, &h);
        }
        Ok(h)
    }

    /// Scalar-to-scalar networks with one hidden layer get fused loops; the
    /// general path spends most of its time on degenerate 1-wide products.
    fn is_scalar_single_hidden(&self) -> bool {
        self.widths.len() == 3 && self.widths[0] == 1 && self.widths[2] == 1
    }

    fn scalar_forward_cached(&self, x: &DenseMatrix) -> MlpCache {
        let h = self.widths[1];
        let (w1, b1) = (self.weights[0].as_slice(), &self.biases[0]);
        let (w2, b2) = (self.weights[1].as_slice(), self.biases[1][0]);
        let n = x.rows();
        let mut hidden = vec![0.0; n * h];
        let mut out = vec![0.0; n];
        for (r, &xv) in x.as_slice().iter().enumerate() {
            let row = &mut hidden[r * h..(r + 1) * h];
            let mut acc = b2;
            for k in 0..h {
                let a = self.hidden.apply(xv * w1[k] + b1[k]);
                row[k] = a;
                acc += a * w2[k];
            }
            out[r] = self.output.apply(acc);
        }
        MlpCache {
            layers: vec![
                x.clone(),
                DenseMatrix::from_raw(n, h, hidden),
                DenseMatrix::from_raw(n, 1, out),
            ],
        }
    }

    fn scalar_backward(&self, cache: &MlpCache, upstream: &DenseMatrix) -> (MlpGrads, DenseMatrix) {
        let h = self.widths[1];
        let (w1, w2) = (self.weights[0].as_slice(), self.weights[1].as_slice());
        let x = cache.layers[0].as_slice();
        let hidden = cache.layers[1].as_slice();
        let out = cache.layers[2].as_slice();
        let mut gw1 = vec![0.0; h];
        let mut gb1 = vec![0.0; h];
        let mut gw2 = vec![0.0; h];
        let mut gb2 = 0.0;
        let mut gx = vec![0.0; x.len()];
        for r in 0..x.len() {
            let d = upstream.as_slice()[r] * self.output.derivative_from_output(out[r]);
            gb2 += d;
            let row = &hidden[r * h..(r + 1) * h];
            let mut dx = 0.0;
            for k in 0..h {
                gw2[k] += d * row[k];
                let dh = d * w2[k] * self.hidden.derivative_from_output(row[k]);
                gw1[k] += dh * x[r];
                gb1[k] += dh;
                dx += dh * w1[k];
            }
            gx[r] = dx;
        }
        (
            MlpGrads {
                weights: vec![
                    DenseMatrix::from_raw(1, h, gw1),
                    DenseMatrix::from_raw(h, 1, gw2),
                ],
                biases: vec![gb1, vec![gb2]],
            },
            DenseMatrix::from_raw(x.len(), 1, gx),
        )
    }

    pub fn forward_cached(&self, x: &DenseMatrix) -> Result<MlpCache, NumericsError> {
        self.check_input(x)?;
        if self.is_scalar_single_hidden() {
            return Ok(self.scalar_forward_cached(x));
        }
        let mut layers = Vec::with_capacity(self.weights.len() + 1);
        layers.push(x.clone());
        for l in 0..self.weights.len() {
            let next = self.layer_forward(l, &layers[l]);
            layers.push(next);
        }
        Ok(MlpCache { layers })
    }

    /// Backpropagates `upstream = ∂L/∂output` through the cached forward pass.
    /// Returns the parameter gradients and `∂L/∂input`.
    pub fn backward(&self, cache: &MlpCache, upstream: &DenseMatrix) -> Result<(MlpGrads, DenseMatrix), NumericsError> {
        let out = cache.output();
        if upstream.rows() != out.rows() || upstream.cols() != out.cols() {
            return Err(NumericsError::Shape(format!(
                "upstream gradient is {}x{}, output is {}x{}",
                upstream.rows(),
                upstream.cols(),
                out.rows(),
                out.cols()
            )));
        }
        if self.is_scalar_single_hidden() {
            return Ok(self.scalar_backward(cache, upstream));
        }
        let n_layers = self.weights.len();
        let mut wgrads = vec![DenseMatrix::zeros(0, 0); n_layers];
        let mut bgrads = vec![Vec::new(); n_layers];
        let mut delta = upstream.clone();
        for l in (0..n_layers).rev() {
            let act = self.activation_for(l);
            let y = &cache.layers[l + 1];
            if act != Activation::Identity {
                for (d, &yv) in delta.as_mut_slice().iter_mut().zip(y.as_slice()) {
                    *d *= act.derivative_from_output(yv);
                }
            }
            let input = &cache.layers[l];
            wgrads[l] = input.t_matmul(&delta)?;
            let mut bg = vec![0.0; delta.cols()];
            for i in 0..delta.rows() {
                for (g, d) in bg.iter_mut().zip(delta.row(i)) {
                    *g += d;
                }
            }
            bgrads[l] = bg;
            delta = delta.matmul_t(&self.weights[l])?;
        }
        Ok((
            MlpGrads {
                weights: wgrads,
                biases: bgrads,
            },
            delta,
        ))
    }

    pub fn num_params(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.rows() * w.cols() + b.len())
            .sum()
    }

    /// Appends all parameters (weights then bias, layer by layer).
    pub fn write_params(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
    }

    /// Reads parameters in [`Mlp::write_params`] order; returns the number of
    /// values consumed.
    pub fn read_params(&mut self, src: &[f64]) -> usize {
        let mut pos = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.rows() * w.cols();
            w.as_mut_slice().copy_from_slice(&src[pos..pos + n]);
            pos += n;
            let nb = b.len();
            b.copy_from_slice(&src[pos..pos + nb]);
            pos += nb;
        }
        pos
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(DenseMatrix::is_finite)
            && self.biases.iter().flatten().all(|v| v.is_finite())
    }
}

impl MlpGrads {
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_tanh_matches_libm() {
        let mut worst = 0.0f64;
        for i in -200_000..=200_000 {
            let x = i as f64 * 1e-4 + 1e-9;
            let err = (tanh(x) - x.tanh()).abs() / x.tanh().abs().max(1e-300);
            worst = worst.max(err);
        }
        assert!(worst < 1e-12, "{worst}");
        assert_eq!(tanh(0.0), 0.0);
        assert_eq!(tanh(800.0), 1.0);
        assert_eq!(tanh(-800.0), -1.0);
    }
    use crate::numerics::fd_gradient_check;

    #[test]
    fn zero_network_outputs_zero() {
        let m = Mlp::from_parts(
            vec![DenseMatrix::zeros(1, 8), DenseMatrix::zeros(8, 1)],
            vec![vec![0.0; 8], vec![0.0]],
            Activation::Tanh,
            Activation::Identity,
        )
        .unwrap();
        let x = DenseMatrix::from_vec(3, 1, vec![-2.0, 0.5, 7.0]).unwrap();
        assert!(m.forward(&x).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_linear_map_is_identity() {
        let m = Mlp::from_parts(
            vec![DenseMatrix::from_vec(1, 1, vec![1.0]).unwrap()],
            vec![vec![0.0]],
            Activation::Tanh,
            Activation::Identity,
        )
        .unwrap();
        let x = DenseMatrix::from_vec(4, 1, vec![-3.0, 0.0, 1.25, 9.0]).unwrap();
        assert_eq!(m.forward(&x).unwrap(), x);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut rng = SeededRng::new(0);
        let m = Mlp::new(&[2, 4, 1], Activation::Tanh, &mut rng).unwrap();
        assert!(m.forward(&DenseMatrix::zeros(3, 1)).is_err());
        assert!(Mlp::new(&[1], Activation::Tanh, &mut rng).is_err());
    }

    fn squared_error_loss(m: &Mlp, x: &DenseMatrix, y: &DenseMatrix) -> f64 {
        let out = m.forward(x).unwrap();
        0.5 * out
            .as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
    }

    fn check_network(widths: &[usize], act: Activation, seed: u64) -> f64 {
        let mut rng = SeededRng::new(seed);
        let m = Mlp::new(widths, act, &mut rng).unwrap();
        let x = DenseMatrix::from_fn(16, widths[0], |_, _| rng.normal());
        let y = DenseMatrix::from_fn(16, *widths.last().unwrap(), |_, _| rng.normal());
        let cache = m.forward_cached(&x).unwrap();
        let resid = cache.output().sub(&y).unwrap();
        let (grads, _) = m.backward(&cache, &resid).unwrap();
        let mut analytic = Vec::new();
        grads.write_flat(&mut analytic);
        let mut theta = Vec::new();
        m.write_params(&mut theta);
        fd_gradient_check(
            |p| {
                let mut mm = m.clone();
                mm.read_params(p);
                squared_error_loss(&mm, &x, &y)
            },
            &analytic,
            &theta,
            1e-5,
        )
        .unwrap()
    }

    #[test]
    fn backward_matches_finite_differences_1_64_1() {
        let err = check_network(&[1, 64, 1], Activation::Tanh, 9);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn backward_matches_finite_differences_deeper_sigmoid() {
        let err = check_network(&[3, 5, 4, 2], Activation::Sigmoid, 21);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(4);
        let m = Mlp::new(&[2, 6, 1], Activation::Tanh, &mut rng).unwrap();
        let x = DenseMatrix::from_fn(5, 2, |_, _| rng.normal());
        let cache = m.forward_cached(&x).unwrap();
        let ones = DenseMatrix::from_fn(5, 1, |_, _| 1.0);
        let (_, gx) = m.backward(&cache, &ones).unwrap();
        let err = fd_gradient_check(
            |p| {
                let xx = DenseMatrix::from_vec(5, 2, p.to_vec()).unwrap();
                m.forward(&xx).unwrap().as_slice().iter().sum()
            },
            gx.as_slice(),
            x.as_slice(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn params_round_trip() {
        let mut rng = SeededRng::new(2);
        let m = Mlp::new(&[1, 4, 1], Activation::Tanh, &mut rng).unwrap();
        let mut flat = Vec::new();
        m.write_params(&mut flat);
        assert_eq!(flat.len(), m.num_params());
        let mut other = Mlp::gaussian(&[1, 4, 1], Activation::Tanh, 1.0, &mut rng).unwrap();
        assert_eq!(other.read_params(&flat), flat.len());
        assert_eq!(other, m);
    }
}
