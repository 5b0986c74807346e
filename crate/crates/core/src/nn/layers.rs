//! Layers with hand-written backward passes.
//!
//! Every layer caches what its backward pass needs during `forward`; parameter
//! gradients accumulate until [`Sequential::zero_grad`].

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor2;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::{self, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Mutable view of one parameter tensor and its gradient.
pub struct Param<'a, S> {
    pub value: &'a mut [S],
    pub grad: &'a mut [S],
}

/// Anything with trainable parameters.
pub trait Parameterized<S: Scalar> {
    /// Parameter tensors in a fixed order.
    fn params(&mut self) -> Vec<Param<'_, S>>;

    fn zero_grad(&mut self) {
        for p in self.params() {
            p.grad.iter_mut().for_each(|g| *g = S::zero());
        }
    }

    fn num_params(&mut self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

/// Fully connected layer `y = xW + b`, with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<S> {
    weight: Tensor2<S>,
    bias: Vec<S>,
    grad_weight: Vec<S>,
    grad_bias: Vec<S>,
    input: Option<Tensor2<S>>,
}

impl<S: Scalar> Dense<S> {
    /// Glorot-uniform weights in `±sqrt(6 / (in + out))`, zero bias.
    pub fn glorot(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let data = (0..inputs * outputs)
            .map(|_| S::of(rng.random_range(-limit..limit)))
            .collect();
        Self::from_parts(
            Tensor2::new(inputs, outputs, data).expect("sized"),
            vec![S::zero(); outputs],
        )
        .expect("consistent")
    }

    pub fn from_parts(weight: Tensor2<S>, bias: Vec<S>) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(Error::ShapeMismatch {
                op: "Dense::from_parts",
                expected: format!("bias of length {}", weight.cols()),
                found: bias.len().to_string(),
            });
        }
        let n = weight.rows() * weight.cols();
        let m = bias.len();
        Ok(Self {
            weight,
            bias,
            grad_weight: vec![S::zero(); n],
            grad_bias: vec![S::zero(); m],
            input: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn weight(&self) -> &Tensor2<S> {
        &self.weight
    }

    pub fn bias(&self) -> &[S] {
        &self.bias
    }

    pub fn grad_weight(&self) -> &[S] {
        &self.grad_weight
    }

    pub fn grad_bias(&self) -> &[S] {
        &self.grad_bias
    }

    pub fn forward(&mut self, x: &Tensor2<S>) -> Result<Tensor2<S>> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    /// Forward pass without caching.
    pub fn infer(&self, x: &Tensor2<S>) -> Result<Tensor2<S>> {
        if x.cols() != self.inputs() {
            return Err(Error::ShapeMismatch {
                op: "dense forward",
                expected: format!("{} input features", self.inputs()),
                found: x.cols().to_string(),
            });
        }
        let mut y = x.matmul(&self.weight)?;
        for r in 0..y.rows() {
            for (v, &b) in y.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor2<S>) -> Result<Tensor2<S>> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("dense backward before forward".into()))?;
        grad_out.expect_shape("dense backward", (x.rows(), self.outputs()))?;
        let gw = x.transposed_matmul(grad_out)?;
        for (g, d) in self.grad_weight.iter_mut().zip(gw.data()) {
            *g += *d;
        }
        for r in 0..grad_out.rows() {
            for (g, &d) in self.grad_bias.iter_mut().zip(grad_out.row(r)) {
                *g += d;
            }
        }
        grad_out.matmul_transposed(&self.weight)
    }
}

/// Elementwise `max(0, x)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Relu<S> {
    input: Option<Tensor2<S>>,
}

impl<S: Scalar> Relu<S> {
    pub fn new() -> Self {
        Self { input: None }
    }

    pub fn forward(&mut self, x: &Tensor2<S>) -> Tensor2<S> {
        self.input = Some(x.clone());
        Self::infer(x)
    }

    pub fn infer(x: &Tensor2<S>) -> Tensor2<S> {
        x.map(|v| if v > S::zero() { v } else { S::zero() })
    }

    pub fn backward(&self, grad_out: &Tensor2<S>) -> Result<Tensor2<S>> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("relu backward before forward".into()))?;
        grad_out.expect_shape("relu backward", x.shape())?;
        let data = grad_out
            .data()
            .iter()
            .zip(x.data())
            .map(|(&g, &v)| if v > S::zero() { g } else { S::zero() })
            .collect();
        Tensor2::new(x.rows(), x.cols(), data)
    }
}

/// Inverted dropout: in training each unit is zeroed with probability `p`
/// and survivors are scaled by `1 / (1 − p)`; evaluation is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Dropout<S> {
    p: f64,
    mask: Option<Vec<S>>,
}

impl<S: Scalar> Dropout<S> {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "dropout probability must lie in [0, 1), got {p}"
            )));
        }
        Ok(Self { p, mask: None })
    }

    pub fn probability(&self) -> f64 {
        self.p
    }

    pub fn forward(&mut self, x: &Tensor2<S>, mode: Mode, rng: &mut Rng) -> Tensor2<S> {
        if mode == Mode::Eval || self.p == 0.0 {
            self.mask = None;
            return x.clone();
        }
        let scale = S::of(1.0 / (1.0 - self.p));
        let mask: Vec<S> = (0..x.data().len())
            .map(|_| {
                if rng.random::<f64>() < self.p {
                    S::zero()
                } else {
                    scale
                }
            })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        self.mask = Some(mask);
        Tensor2::new(x.rows(), x.cols(), data).expect("same shape")
    }

    pub fn backward(&self, grad_out: &Tensor2<S>) -> Result<Tensor2<S>> {
        match &self.mask {
            None => Ok(grad_out.clone()),
            Some(mask) => {
                if mask.len() != grad_out.data().len() {
                    return Err(Error::ShapeMismatch {
                        op: "dropout backward",
                        expected: format!("{} values", mask.len()),
                        found: grad_out.data().len().to_string(),
                    });
                }
                let data = grad_out.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                Tensor2::new(grad_out.rows(), grad_out.cols(), data)
            }
        }
    }
}

/// Identity on the way forward; multiplies the gradient by `−λ` on the way back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientReversal<S> {
    lambda: S,
}

impl<S: Scalar> GradientReversal<S> {
    pub fn new(lambda: S) -> Result<Self> {
        if !(lambda >= S::zero()) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> S {
        self.lambda
    }

    pub fn forward(&self, x: &Tensor2<S>) -> Tensor2<S> {
        x.clone()
    }

    pub fn backward(&self, grad_out: &Tensor2<S>) -> Tensor2<S> {
        let scale = -self.lambda;
        grad_out.map(|g| scale * g)
    }
}

/// Row-wise `y = k·x / ‖x‖`: projects onto a sphere of radius `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct L2Normalize<S> {
    scale: S,
    /// Unit rows and the norms they were divided by.
    cache: Option<(Tensor2<S>, Vec<S>)>,
}

impl<S: Scalar> L2Normalize<S> {
    pub fn new(scale: S) -> Result<Self> {
        if !(scale > S::zero()) || !scale.is_finite() {
            return Err(Error::InvalidArgument(format!("normalization scale must be > 0, got {scale}")));
        }
        Ok(Self { scale, cache: None })
    }

    pub fn scale(&self) -> S {
        self.scale
    }

    fn unit(x: &Tensor2<S>) -> Result<(Tensor2<S>, Vec<S>)> {
        let mut u = x.clone();
        let mut norms = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let n = scalar::norm(x.row(r));
            if !(n > S::zero()) {
                return Err(Error::NonFinite(format!("normalization of zero row {r}")));
            }
            u.row_mut(r).iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        Ok((u, norms))
    }

    pub fn infer(&self, x: &Tensor2<S>) -> Result<Tensor2<S>> {
        let k = self.scale;
        Ok(Self::unit(x)?.0.map(|v| v * k))
    }

    pub fn forward(&mut self, x: &Tensor2<S>) -> Result<Tensor2<S>> {
        let (u, norms) = Self::unit(x)?;
        let k = self.scale;
        let y = u.map(|v| v * k);
        self.cache = Some((u, norms));
        Ok(y)
    }

    /// `dx = k (g − u (u·g)) / ‖x‖` row by row.
    pub fn backward(&self, grad_out: &Tensor2<S>) -> Result<Tensor2<S>> {
        let (u, norms) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("normalize backward before forward".into()))?;
        grad_out.expect_shape("normalize backward", u.shape())?;
        let mut out = grad_out.clone();
        for r in 0..u.rows() {
            let ur = u.row(r);
            let proj = scalar::dot(ur, grad_out.row(r));
            let f = self.scale / norms[r];
            for (o, &uv) in out.row_mut(r).iter_mut().zip(ur) {
                *o = f * (*o - proj * uv);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<S> {
    Dense(Dense<S>),
    Relu(Relu<S>),
    Dropout(Dropout<S>),
    Reversal(GradientReversal<S>),
    Normalize(L2Normalize<S>),
}

impl<S: Scalar> Layer<S> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Relu(_) => "relu",
            Layer::Dropout(_) => "dropout",
            Layer::Reversal(_) => "gradient_reversal",
            Layer::Normalize(_) => "l2_normalize",
        }
    }

    pub fn forward(&mut self, x: &Tensor2<S>, mode: Mode, rng: &mut Rng) -> Result<Tensor2<S>> {
        match self {
            Layer::Dense(l) => l.forward(x),
            Layer::Relu(l) => Ok(l.forward(x)),
            Layer::Dropout(l) => Ok(l.forward(x, mode, rng)),
            Layer::Reversal(l) => Ok(l.forward(x)),
            Layer::Normalize(l) => l.forward(x),
        }
    }

    /// Evaluation-mode forward pass that leaves caches untouched.
    pub fn infer(&self, x: &Tensor2<S>) -> Result<Tensor2<S>> {
        match self {
            Layer::Dense(l) => l.infer(x),
            Layer::Relu(_) => Ok(Relu::infer(x)),
            Layer::Dropout(_) | Layer::Reversal(_) => Ok(x.clone()),
            Layer::Normalize(l) => l.infer(x),
        }
    }

    pub fn backward(&mut self, grad_out: &Tensor2<S>) -> Result<Tensor2<S>> {
        match self {
            Layer::Dense(l) => l.backward(grad_out),
            Layer::Relu(l) => l.backward(grad_out),
            Layer::Dropout(l) => l.backward(grad_out),
            Layer::Reversal(l) => Ok(l.backward(grad_out)),
            Layer::Normalize(l) => l.backward(grad_out),
        }
    }
}

/// Layers applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential<S> {
    layers: Vec<Layer<S>>,
}

impl<S: Scalar> Sequential<S> {
    pub fn new(layers: Vec<Layer<S>>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<S>] {
        &mut self.layers
    }

    /// Width of the first dense layer's input.
    pub fn input_width(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match l {
            Layer::Dense(d) => Some(d.inputs()),
            _ => None,
        })
    }

    /// Width of the last dense layer's output.
    pub fn output_width(&self) -> Option<usize> {
        self.layers.iter().rev().find_map(|l| match l {
            Layer::Dense(d) => Some(d.outputs()),
            _ => None,
        })
    }

    pub fn forward(&mut self, x: &Tensor2<S>, mode: Mode, rng: &mut Rng) -> Result<Tensor2<S>> {
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h, mode, rng)?;
        }
        h.check_finite("forward activations")?;
        Ok(h)
    }

    pub fn infer(&self, x: &Tensor2<S>) -> Result<Tensor2<S>> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h)?;
        }
        h.check_finite("forward activations")?;
        Ok(h)
    }

    pub fn backward(&mut self, grad_out: &Tensor2<S>) -> Result<Tensor2<S>> {
        let mut g = grad_out.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }
}

impl<S: Scalar> Parameterized<S> for Sequential<S> {
    fn params(&mut self) -> Vec<Param<'_, S>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            if let Layer::Dense(d) = layer {
                out.push(Param {
                    value: d.weight.data_mut(),
                    grad: &mut d.grad_weight,
                });
                out.push(Param {
                    value: &mut d.bias,
                    grad: &mut d.grad_bias,
                });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, Stream};

    fn rng() -> Rng {
        seeded(0, Stream::Dropout)
    }

    #[test]
    fn identity_weights_pass_input_through() {
        let mut d = Dense::from_parts(
            Tensor2::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            vec![0.0, 0.0],
        )
        .unwrap();
        let x = Tensor2::new(1, 2, vec![1.0, 2.0]).unwrap();
        assert_eq!(d.forward(&x).unwrap(), x);
    }

    #[test]
    fn dense_hand_arithmetic() {
        let mut d = Dense::from_parts(
            Tensor2::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            vec![3.0, 3.0],
        )
        .unwrap();
        let y = d.forward(&Tensor2::new(1, 2, vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[4.0, 5.0]);
    }

    #[test]
    fn dense_shape_mismatch() {
        let mut d = Dense::<f64>::glorot(3, 2, &mut rng());
        assert!(matches!(
            d.forward(&Tensor2::zeros(1, 4)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn glorot_bounds() {
        let d = Dense::<f64>::glorot(30, 20, &mut rng());
        let limit = (6.0f64 / 50.0).sqrt();
        assert!(d.weight().data().iter().all(|w| w.abs() <= limit));
        assert!(d.bias().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut d = Dropout::new(0.5).unwrap();
        let x = Tensor2::new(2, 3, vec![1.0, -2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(d.forward(&x, Mode::Eval, &mut rng()), x);
        assert_eq!(d.backward(&x).unwrap(), x);
    }

    #[test]
    fn dropout_train_statistics() {
        let n = 100_000;
        let mut d = Dropout::new(0.5).unwrap();
        let x = Tensor2::filled(1, n, 1.0f64);
        let y = d.forward(&x, Mode::Train, &mut rng());
        let survivors = y.data().iter().filter(|&&v| v != 0.0).count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((survivors - n as f64 * 0.5).abs() < 3.0 * sigma);
        // each output is 0 or 2, so the mean has standard deviation 1/sqrt(n)
        let mean = y.data().iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 3.0 / (n as f64).sqrt());
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn dropout_rejects_bad_probability() {
        assert!(Dropout::<f64>::new(1.0).is_err());
        assert!(Dropout::<f64>::new(-0.1).is_err());
    }

    #[test]
    fn reversal_forward_identity_backward_negated() {
        let x = Tensor2::new(2, 2, vec![0.1, -3.0, 7.5, 1e-300]).unwrap();
        for lambda in [0.0, 0.3, 1.0, 5.0] {
            let grl = GradientReversal::new(lambda).unwrap();
            assert_eq!(grl.forward(&x), x);
        }
        let ones = Tensor2::filled(2, 3, 1.0);
        assert!(GradientReversal::new(1.0).unwrap().backward(&ones).data().iter().all(|&g| g == -1.0));
        assert!(GradientReversal::new(0.0).unwrap().backward(&ones).data().iter().all(|&g| g == 0.0));
        let g = Tensor2::new(1, 2, vec![0.5, -2.0]).unwrap();
        assert_eq!(GradientReversal::new(2.5).unwrap().backward(&g).data(), &[-1.25, 5.0]);
    }

    #[test]
    fn normalize_projects_to_sphere() {
        let mut n = L2Normalize::<f64>::new(2.0).unwrap();
        let y = n.forward(&Tensor2::new(1, 2, vec![3.0, 4.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[1.2, 1.6]);
        // gradient along the row itself vanishes
        let g = n.backward(&Tensor2::new(1, 2, vec![3.0, 4.0]).unwrap()).unwrap();
        assert!(g.data().iter().all(|v| v.abs() < 1e-15));
        assert!(n.forward(&Tensor2::zeros(1, 2)).is_err());
    }

    #[test]
    fn relu_masks_gradient() {
        let mut r = Relu::new();
        let y = r.forward(&Tensor2::new(1, 3, vec![-1.0, 0.5, 2.0]).unwrap());
        assert_eq!(y.data(), &[0.0, 0.5, 2.0]);
        let g = r.backward(&Tensor2::filled(1, 3, 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 1.0]);
    }
}
