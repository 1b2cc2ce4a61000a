use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            other => return Err(Error::Config(format!("unknown activation {other:?}"))),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            other => Err(Error::InvalidInput(format!("unknown activation code {other}"))),
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
        }
    }
}

/// Two-layer regression head: `w2 . act(w1^T x + b1) + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpHead {
    /// `input_dim x hidden`.
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DVector<f64>,
    pub b2: f64,
    pub activation: Activation,
}

/// Pre-activations kept for the backward pass.
pub struct MlpCache {
    z: DVector<f64>,
    h: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DVector<f64>,
    pub b2: f64,
}

impl MlpGrads {
    pub fn zeros(head: &MlpHead) -> Self {
        Self {
            w1: DMatrix::zeros(head.w1.nrows(), head.w1.ncols()),
            b1: DVector::zeros(head.b1.len()),
            w2: DVector::zeros(head.w2.len()),
            b2: 0.0,
        }
    }
}

pub(crate) fn uniform_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> DMatrix<f64> {
    // Column-major fill keeps the draw order equal to the storage order.
    DMatrix::from_iterator(rows, cols, (0..rows * cols).map(|_| rng.random_range(-bound..=bound)))
}

impl MlpHead {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation for each layer.
    pub fn init<R: Rng>(input_dim: usize, hidden: usize, activation: Activation, rng: &mut R) -> Self {
        let k1 = 1.0 / (input_dim as f64).sqrt();
        let k2 = 1.0 / (hidden as f64).sqrt();
        let w1 = uniform_matrix(rng, input_dim, hidden, k1);
        let b1 = DVector::from_iterator(hidden, (0..hidden).map(|_| rng.random_range(-k1..=k1)));
        let w2 = DVector::from_iterator(hidden, (0..hidden).map(|_| rng.random_range(-k2..=k2)));
        let b2 = rng.random_range(-k2..=k2);
        Self {
            w1,
            b1,
            w2,
            b2,
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.ncols()
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "MLP expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("MLP input {v}")));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.forward_cached(x).map(|(q, _)| q)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<(f64, MlpCache)> {
        self.check_input(x)?;
        let x = DVector::from_column_slice(x);
        let z = self.w1.tr_mul(&x) + &self.b1;
        let h = z.map(|v| self.activation.apply(v));
        let q = self.w2.dot(&h) + self.b2;
        Ok((q, MlpCache { z, h }))
    }

    /// Accumulates `dq * dq/dparams` into `grads` and returns `dq/dx * dq`.
    pub fn backward(&self, x: &[f64], cache: &MlpCache, dq: f64, grads: &mut MlpGrads) -> DVector<f64> {
        grads.w2.axpy(dq, &cache.h, 1.0);
        grads.b2 += dq;
        let dz = DVector::from_iterator(
            self.hidden(),
            cache
                .z
                .iter()
                .zip(self.w2.iter())
                .map(|(&z, &w)| dq * w * self.activation.derivative(z)),
        );
        let x = DVector::from_column_slice(x);
        grads.w1.ger(1.0, &x, &dz, 1.0);
        grads.b1 += &dz;
        &self.w1 * dz
    }

    pub(crate) fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.w1.as_slice());
        out.extend_from_slice(self.b1.as_slice());
        out.extend_from_slice(self.w2.as_slice());
        out.push(self.b2);
    }

    pub(crate) fn read_params(&mut self, src: &[f64]) -> usize {
        let mut k = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&src[k..k + dst.len()]);
            k += dst.len();
        };
        take(self.w1.as_mut_slice());
        take(self.b1.as_mut_slice());
        take(self.w2.as_mut_slice());
        self.b2 = src[k];
        k + 1
    }
}

impl MlpGrads {
    pub(crate) fn write(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.w1.as_slice());
        out.extend_from_slice(self.b1.as_slice());
        out.extend_from_slice(self.w2.as_slice());
        out.push(self.b2);
    }
}
