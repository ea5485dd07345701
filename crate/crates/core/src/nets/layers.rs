use rand::Rng;
use xreg_autograd::{Activation, Parameter, Tensor, Var};

use super::session::{ParamGroup, Session};
use crate::error::Result;

pub(crate) const NORM_EPS: f64 = 1e-5;

/// Kaiming-uniform bound for a leaky-relu layer with `fan_in` inputs.
fn init_bound(fan_in: usize) -> f32 {
    let slope = 0.2f64;
    (6.0 / ((1.0 + slope * slope) * fan_in as f64)).sqrt() as f32
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f32) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound))
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: Parameter,
    pub bias: Parameter,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new<R: Rng + ?Sized>(
        rng: &mut R,
        name: &str,
        rank: usize,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let mut shape = vec![cout, cin];
        shape.extend(std::iter::repeat_n(kernel, rank));
        let fan_in = cin * kernel.pow(rank as u32);
        Conv {
            weight: Parameter::new(format!("{name}.weight"), uniform(rng, &shape, init_bound(fan_in))),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[cout])),
            stride,
            padding,
        }
    }

    pub(crate) fn zeroed(mut self) -> Self {
        self.weight.tensor = Tensor::zeros(self.weight.shape());
        self
    }

    pub(crate) fn forward(&self, s: &mut Session, x: Var, group: ParamGroup) -> Result<Var> {
        let w = s.bind(&self.weight, group)?;
        let b = s.bind(&self.bias, group)?;
        Ok(s.graph.conv(x, w, Some(b), self.stride, self.padding)?)
    }

    /// conv → instance norm → leaky relu
    pub(crate) fn block(&self, s: &mut Session, x: Var, group: ParamGroup) -> Result<Var> {
        let y = self.forward(s, x, group)?;
        let y = s.graph.instance_norm(y, NORM_EPS)?;
        Ok(s.graph.activation(y, Activation::LEAKY_DEFAULT)?)
    }

    /// conv → leaky relu
    pub(crate) fn plain_block(&self, s: &mut Session, x: Var, group: ParamGroup) -> Result<Var> {
        let y = self.forward(s, x, group)?;
        Ok(s.graph.activation(y, Activation::LEAKY_DEFAULT)?)
    }

    pub(crate) fn params(&self) -> [&Parameter; 2] {
        [&self.weight, &self.bias]
    }

    pub(crate) fn params_mut(&mut self) -> [&mut Parameter; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    pub(crate) fn zeros(name: &str, fin: usize, fout: usize) -> Self {
        Linear {
            weight: Parameter::new(format!("{name}.weight"), Tensor::zeros(&[fout, fin])),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[fout])),
        }
    }

    pub(crate) fn forward(&self, s: &mut Session, x: Var, group: ParamGroup) -> Result<Var> {
        let w = s.bind(&self.weight, group)?;
        let b = s.bind(&self.bias, group)?;
        Ok(s.graph.linear(x, w, Some(b))?)
    }

    pub(crate) fn params(&self) -> [&Parameter; 2] {
        [&self.weight, &self.bias]
    }

    pub(crate) fn params_mut(&mut self) -> [&mut Parameter; 2] {
        [&mut self.weight, &mut self.bias]
    }
}
