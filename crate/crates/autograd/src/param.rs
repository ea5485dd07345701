use crate::tensor::Tensor;

/// A named trainable tensor. Names are dotted paths such as
/// `encoder.conv3.weight` and must be unique within a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    name: String,
    pub tensor: Tensor<f32>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: Tensor<f32>) -> Self {
        Parameter {
            name: name.into(),
            tensor,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }
}
