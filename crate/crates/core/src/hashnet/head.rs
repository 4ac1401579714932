use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{accumulate_tn, affine_nt, matmul_nn, Matrix};
use crate::scalar::Scalar;

/// One fully connected layer, `weight` is `out_dim x in_dim` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub(crate) in_dim: usize,
    pub(crate) out_dim: usize,
    pub(crate) weight: Vec<T>,
    pub(crate) bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(in_dim: usize, out_dim: usize, weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::shape(format!("layer {out_dim}x{in_dim} has a zero dimension")));
        }
        if weight.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::shape(format!(
                "layer {out_dim}x{in_dim}: got {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weight(&self) -> &[T] {
        &self.weight
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }
}

/// Hashing MLP: rectifier hidden layers and a `tanh` soft-binary output.
///
/// The canonical shape is three layers `[input, hidden, hidden, bits]`, but any
/// depth of at least one layer is accepted so that tiny nets can be checked
/// against finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct HashHead<T> {
    layers: Vec<Dense<T>>,
}

/// Activations retained by a batched forward pass for use in backprop.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    /// `acts[0]` is the input, `acts[l + 1]` the post-activation output of layer `l`.
    acts: Vec<Matrix<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    /// Soft-binary outputs, one row per sample.
    pub fn output(&self) -> &Matrix<T> {
        self.acts.last().expect("trace holds at least the input")
    }

    pub fn into_output(mut self) -> Matrix<T> {
        self.acts.pop().expect("trace holds at least the input")
    }
}

/// Gradients with the same layout as the head they were computed for.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Scalar> GradientSet<T> {
    pub fn zeros_like(head: &HashHead<T>) -> Self {
        Self {
            weights: head.layers.iter().map(|l| vec![T::zero(); l.weight.len()]).collect(),
            biases: head.layers.iter().map(|l| vec![T::zero(); l.bias.len()]).collect(),
        }
    }

    /// Flattened in the same order as [`HashHead::parameters`].
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn is_congruent(&self, head: &HashHead<T>) -> bool {
        self.weights.len() == head.layers.len()
            && self.biases.len() == head.layers.len()
            && head
                .layers
                .iter()
                .enumerate()
                .all(|(i, l)| self.weights[i].len() == l.weight.len() && self.biases[i].len() == l.bias.len())
    }

    pub fn scale(&mut self, s: T) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|g| *g *= s);
        }
    }
}

impl<T: Scalar> HashHead<T> {
    /// Glorot-uniform weights, zero biases, deterministic in `seed`.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        Self::check_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight = (0..fan_in * fan_out).map(|_| T::lit(rng.random_range(-a..a))).collect();
                Dense::new(fan_in, fan_out, weight, vec![T::zero(); fan_out])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    /// All parameters zero.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| Dense::new(w[0], w[1], vec![T::zero(); w[0] * w[1]], vec![T::zero(); w[1]]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Dense<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("a hash head needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::shape(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].out_dim,
                    i + 1,
                    pair[1].in_dim
                )));
            }
        }
        let head = Self { layers };
        head.check_finite()?;
        Ok(head)
    }

    fn check_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::shape(format!(
                "layer dims {dims:?} must have at least two positive entries"
            )));
        }
        Ok(())
    }

    fn check_finite(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            if let Some(j) = l.weight.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    path: format!("layers[{i}].weight[{j}]"),
                });
            }
            if let Some(j) = l.bias.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    path: format!("layers[{i}].bias[{j}]"),
                });
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].in_dim];
        dims.extend(self.layers.iter().map(|l| l.out_dim));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    /// Number of output hash bits.
    pub fn bits(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Flattened parameters: per layer, weights then biases.
    pub fn parameters(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&params[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Scalar>(&self) -> HashHead<U> {
        HashHead {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    weight: l.weight.iter().map(|&v| U::lit(v.as_f64())).collect(),
                    bias: l.bias.iter().map(|&v| U::lit(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    /// Continuous hash vector for one input; every entry lies in `(-1, 1)`
    /// up to floating point saturation.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        let x = Matrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.forward_batch(&x)?.into_vec())
    }

    pub fn forward_batch(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(self.forward_trace(x)?.into_output())
    }

    pub fn forward_trace(&self, x: &Matrix<T>) -> Result<ForwardTrace<T>> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "input has dimension {}, head expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Matrix::zeros(x.rows(), layer.out_dim);
            affine_nt(&acts[i], &layer.weight, &layer.bias, &mut z);
            if i == last {
                z.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
            } else {
                z.as_mut_slice().iter_mut().for_each(|v| *v = v.max(T::zero()));
            }
            acts.push(z);
        }
        Ok(ForwardTrace { acts })
    }

    /// Gradient of a scalar loss for one input, given `d loss / d output`.
    pub fn backward(&self, x: &[T], upstream: &[T]) -> Result<GradientSet<T>> {
        let x = Matrix::from_vec(1, x.len(), x.to_vec())?;
        let trace = self.forward_trace(&x)?;
        let up = Matrix::from_vec(1, upstream.len(), upstream.to_vec())?;
        self.backward_batch(&trace, &up)
    }

    /// Gradients summed over the batch; samples are reduced in ascending order.
    pub fn backward_batch(&self, trace: &ForwardTrace<T>, upstream: &Matrix<T>) -> Result<GradientSet<T>> {
        let out = trace.output();
        if upstream.rows() != out.rows() || upstream.cols() != self.bits() {
            return Err(Error::shape(format!(
                "upstream gradient is {}x{}, expected {}x{}",
                upstream.rows(),
                upstream.cols(),
                out.rows(),
                self.bits()
            )));
        }
        let mut grads = GradientSet::zeros_like(self);
        let last = self.layers.len() - 1;

        // d loss / d pre-activation of the output layer
        let mut dz = upstream.clone();
        for (g, &o) in dz.as_mut_slice().iter_mut().zip(out.as_slice()) {
            *g *= T::one() - o * o;
        }
        for i in (0..=last).rev() {
            let layer = &self.layers[i];
            let input = &trace.acts[i];
            accumulate_tn(&dz, input, &mut grads.weights[i]);
            for r in 0..dz.rows() {
                for (gb, &g) in grads.biases[i].iter_mut().zip(dz.row(r)) {
                    *gb += g;
                }
            }
            if i == 0 {
                break;
            }
            let mut da = matmul_nn(&dz, &layer.weight, layer.in_dim);
            // input of layer i is the rectified output of layer i - 1
            for (g, &a) in da.as_mut_slice().iter_mut().zip(input.as_slice()) {
                if a <= T::zero() {
                    *g = T::zero();
                }
            }
            dz = da;
        }
        Ok(grads)
    }
}
