use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{real, sigmoid, Parameters, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Silu,
}

impl Activation {
    fn apply<F: Real>(self, z: F) -> F {
        match self {
            Activation::Relu => z.max(F::zero()),
            Activation::Silu => z * sigmoid(z),
        }
    }

    fn derivative<F: Real>(self, z: F) -> F {
        match self {
            Activation::Relu => {
                if z > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Silu => {
                let s = sigmoid(z);
                s * (F::one() + z * (F::one() - s))
            }
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Self::Relu),
            "silu" => Ok(Self::Silu),
            other => Err(Error::InvalidParameter(format!(
                "unknown activation '{other}' (expected relu or silu)"
            ))),
        }
    }
}

/// Layer sizes and hidden activation of a fully connected network with a linear output.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
}

impl MlpSpec {
    fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.hidden.len() + 2);
        d.push(self.input);
        d.extend(&self.hidden);
        d.push(self.output);
        d
    }

    pub fn param_count(&self) -> usize {
        self.dims().windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }
}

/// `y = x W + b`, with `W` stored as inputs × outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F> {
    spec: MlpSpec,
    layers: Vec<Dense<F>>,
}

/// Activations recorded by [`Mlp::forward_recorded`] for a later backward pass.
#[derive(Debug, Clone)]
pub struct Tape<F> {
    inputs: Vec<Array2<F>>,
    pre: Vec<Array2<F>>,
}

impl<F> Default for Tape<F> {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            pre: Vec::new(),
        }
    }
}

impl<F: Real> Mlp<F> {
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        let dims = spec.dims();
        if dims.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "layer sizes must be positive, got {dims:?}"
            )));
        }
        let layers = dims
            .windows(2)
            .map(|w| Dense {
                weight: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Self { spec, layers })
    }

    /// Uniform fan-in initialization, U(±√(6/fan_in)), with zero biases.
    pub fn he_uniform<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(spec)?;
        for layer in &mut m.layers {
            let bound = (6.0 / layer.weight.nrows() as f64).sqrt();
            layer.weight.mapv_inplace(|_| real(rng.gen_range(-bound..bound)));
        }
        Ok(m)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<F>] {
        &mut self.layers
    }

    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().expect("at least one layer");
        last.weight.fill(F::zero());
        last.bias.fill(F::zero());
    }

    fn check_input(&self, x: &ArrayView2<F>) -> Result<()> {
        if x.ncols() != self.spec.input {
            return Err(Error::LengthMismatch {
                expected: self.spec.input,
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    /// Batched forward pass; rows are examples.
    pub fn forward(&self, x: ArrayView2<F>) -> Result<Array2<F>> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut a = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weight) + &layer.bias;
            if l < last {
                let act = self.spec.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            a = z;
        }
        Ok(a)
    }

    pub fn forward_one(&self, x: &[F]) -> Result<Vec<F>> {
        let view = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Internal(e.to_string()))?;
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_recorded(&self, x: ArrayView2<F>) -> Result<(Array2<F>, Tape<F>)> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut tape = Tape {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(last),
        };
        let mut a = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.weight) + &layer.bias;
            tape.inputs.push(a);
            if l < last {
                let act = self.spec.activation;
                a = z.mapv(|v| act.apply(v));
                tape.pre.push(z);
            } else {
                a = z;
            }
        }
        Ok((a, tape))
    }

    /// Gradients of a scalar loss given dL/dy for the recorded batch. Returns the parameter
    /// gradients (as a network of the same shape) and dL/dx.
    pub fn backward(&self, tape: &Tape<F>, dy: ArrayView2<F>) -> Result<(Mlp<F>, Array2<F>)> {
        if tape.inputs.len() != self.layers.len() {
            return Err(Error::NoForwardPass);
        }
        let batch = tape.inputs[0].nrows();
        if dy.dim() != (batch, self.spec.output) {
            return Err(Error::LengthMismatch {
                expected: batch * self.spec.output,
                actual: dy.len(),
            });
        }
        let mut grads = Mlp::zeros(self.spec.clone())?;
        let mut delta = dy.to_owned();
        for l in (0..self.layers.len()).rev() {
            if l < self.layers.len() - 1 {
                let act = self.spec.activation;
                delta.zip_mut_with(&tape.pre[l], |d, &z| *d *= act.derivative(z));
            }
            grads.layers[l].weight = tape.inputs[l].t().dot(&delta);
            grads.layers[l].bias = delta.sum_axis(Axis(0));
            delta = delta.dot(&self.layers[l].weight.t());
        }
        Ok((grads, delta))
    }

    pub fn cast<G: Real>(&self) -> Mlp<G> {
        Mlp {
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: l.weight.mapv(|v| G::from(v).expect("castable")),
                    bias: l.bias.mapv(|v| G::from(v).expect("castable")),
                })
                .collect(),
        }
    }
}

impl<F: Real> Parameters<F> for Mlp<F> {
    fn tensors(&self) -> Vec<&[F]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::Array2;

    fn spec(act: Activation) -> MlpSpec {
        MlpSpec {
            input: 4,
            hidden: vec![6, 5],
            output: 3,
            activation: act,
        }
    }

    #[allow(clippy::needless_range_loop)]
    fn naive_forward(m: &Mlp<f64>, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let last = m.layers().len() - 1;
        for (l, layer) in m.layers().iter().enumerate() {
            let mut z = vec![0.0; layer.bias.len()];
            for j in 0..z.len() {
                z[j] = layer.bias[j];
                for i in 0..a.len() {
                    z[j] += a[i] * layer.weight[[i, j]];
                }
                if l < last {
                    z[j] = match m.spec().activation {
                        Activation::Relu => z[j].max(0.0),
                        Activation::Silu => z[j] / (1.0 + (-z[j]).exp()),
                    };
                }
            }
            a = z;
        }
        a
    }

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = stream(seed, 0);
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.5..1.5))
    }

    fn randomize_biases(m: &mut Mlp<f64>, seed: u64) {
        let mut rng = stream(seed, 1);
        for l in m.layers_mut() {
            l.bias.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        }
    }

    #[test]
    fn zero_model_outputs_zero() {
        let m = Mlp::<f64>::zeros(spec(Activation::Relu)).unwrap();
        let y = m.forward(random_batch(3, 4, 0).view()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_linear_model() {
        let s = MlpSpec {
            input: 3,
            hidden: vec![],
            output: 3,
            activation: Activation::Relu,
        };
        let mut m = Mlp::<f64>::zeros(s).unwrap();
        m.layers_mut()[0].weight = Array2::eye(3);
        assert_eq!(m.forward_one(&[0.5, -2.0, 7.0]).unwrap(), vec![0.5, -2.0, 7.0]);
    }

    #[test]
    fn matches_naive_forward() {
        for act in [Activation::Relu, Activation::Silu] {
            let mut m = Mlp::<f64>::he_uniform(spec(act), &mut stream(5, 0)).unwrap();
            randomize_biases(&mut m, 5);
            let x = random_batch(7, 4, 9);
            let y = m.forward(x.view()).unwrap();
            for r in 0..7 {
                let naive = naive_forward(&m, x.row(r).as_slice().unwrap());
                for (a, b) in y.row(r).iter().zip(naive) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_wrong_input_width() {
        let m = Mlp::<f64>::zeros(spec(Activation::Relu)).unwrap();
        assert!(m.forward(random_batch(2, 5, 0).view()).is_err());
    }

    #[test]
    fn backward_without_forward_fails() {
        let m = Mlp::<f64>::zeros(spec(Activation::Relu)).unwrap();
        let dy = Array2::zeros((1, 3));
        assert!(matches!(
            m.backward(&Tape::default(), dy.view()),
            Err(Error::NoForwardPass)
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for act in [Activation::Relu, Activation::Silu] {
            let mut m = Mlp::<f64>::he_uniform(spec(act), &mut stream(3, 0)).unwrap();
            randomize_biases(&mut m, 3);
            let x = random_batch(5, 4, 4);
            let target = random_batch(5, 3, 6);
            let loss = |m: &Mlp<f64>| -> f64 {
                let y = m.forward(x.view()).unwrap();
                0.5 * (&y - &target).mapv(|v| v * v).sum()
            };
            let (y, tape) = m.forward_recorded(x.view()).unwrap();
            let (g, dx) = m.backward(&tape, (&y - &target).view()).unwrap();
            let flat = m.to_flat();
            let gflat = g.to_flat();
            let h = 1e-6;
            for i in 0..flat.len() {
                let mut p = m.clone();
                let mut q = m.clone();
                let (mut fp, mut fq) = (flat.clone(), flat.clone());
                fp[i] += h;
                fq[i] -= h;
                p.load_flat(&fp).unwrap();
                q.load_flat(&fq).unwrap();
                let fd = (loss(&p) - loss(&q)) / (2.0 * h);
                assert!(
                    (fd - gflat[i]).abs() <= 1e-4 * gflat[i].abs().max(1e-2),
                    "param {i}: fd {fd} vs {}",
                    gflat[i]
                );
            }
            for r in 0..5 {
                for c in 0..4 {
                    let (mut xp, mut xq) = (x.clone(), x.clone());
                    xp[[r, c]] += h;
                    xq[[r, c]] -= h;
                    let lp = 0.5 * (&m.forward(xp.view()).unwrap() - &target).mapv(|v| v * v).sum();
                    let lq = 0.5 * (&m.forward(xq.view()).unwrap() - &target).mapv(|v| v * v).sum();
                    let fd = (lp - lq) / (2.0 * h);
                    assert!((fd - dx[[r, c]]).abs() <= 1e-4 * dx[[r, c]].abs().max(1e-2));
                }
            }
        }
    }

    #[test]
    fn zero_loss_gradient_and_linearity() {
        let mut m = Mlp::<f64>::he_uniform(spec(Activation::Silu), &mut stream(8, 0)).unwrap();
        randomize_biases(&mut m, 8);
        let x = random_batch(4, 4, 1);
        let (_, tape) = m.forward_recorded(x.view()).unwrap();
        let (g0, _) = m.backward(&tape, Array2::zeros((4, 3)).view()).unwrap();
        assert!(g0.to_flat().iter().all(|&v| v == 0.0));

        let d1 = random_batch(4, 3, 2);
        let d2 = random_batch(4, 3, 3);
        let (mut ga, _) = m.backward(&tape, d1.view()).unwrap();
        let (gb, _) = m.backward(&tape, d2.view()).unwrap();
        let (gs, _) = m.backward(&tape, (&d1 + &d2).view()).unwrap();
        ga.add_assign(&gb).unwrap();
        for (a, b) in ga.to_flat().iter().zip(gs.to_flat()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_round_trip() {
        let m = Mlp::<f32>::he_uniform(spec(Activation::Relu), &mut stream(2, 0)).unwrap();
        assert_eq!(m.param_count(), m.spec().param_count());
        let mut z = Mlp::<f32>::zeros(spec(Activation::Relu)).unwrap();
        z.load_flat(&m.to_flat()).unwrap();
        assert_eq!(z, m);
        assert!(z.load_flat(&[0.0; 3]).is_err());
    }
}
