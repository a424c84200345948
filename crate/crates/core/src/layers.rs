//! Fully connected building blocks on top of the tape.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::numeric::{ParamId, ParamStore, Tape, Tensor, Var};

/// `x·W + b`, with `W` stored as `in × out`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, bias: bool, rng: &mut R) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), glorot(in_dim, out_dim, rng))?;
        let bias = if bias { Some(store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?) } else { None };
        Ok(Self { weight, bias, in_dim, out_dim })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight)?;
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b)?;
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// Stack of linear layers, each followed by ReLU.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, depth: usize, rng: &mut R) -> Result<Self> {
        let mut layers = Vec::with_capacity(depth.max(1));
        let mut d = in_dim;
        for l in 0..depth.max(1) {
            layers.push(Linear::new(store, &format!("{name}.{l}"), d, out_dim, true, rng)?);
            d = out_dim;
        }
        Ok(Self { layers })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers {
            let z = layer.forward(tape, store, h)?;
            h = tape.relu(z)?;
        }
        Ok(h)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(Linear::params).collect()
    }
}

/// Glorot-normal initialization.
pub fn glorot<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Tensor {
    let std = (2.0 / (in_dim + out_dim).max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let data = (0..in_dim * out_dim).map(|_| normal.sample(rng)).collect();
    Tensor::new(vec![in_dim, out_dim], data).expect("shape matches")
}
