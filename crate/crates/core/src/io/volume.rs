use serde::{Deserialize, Serialize};
use xreg_autograd::Tensor;

use crate::error::{Error, Result};
use crate::eval::{spatial_dims, LabelVolume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    A,
    B,
}

/// One image with its physical voxel size. Intensities are stored raw.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeRecord {
    /// `[1, 1, spatial]`.
    pub image: Tensor,
    /// Millimetres per voxel along each spatial axis.
    pub voxel_size: Vec<f64>,
    pub modality: Modality,
    pub labels: Option<LabelVolume>,
}

impl VolumeRecord {
    pub fn new(image: Tensor, voxel_size: Vec<f64>, modality: Modality, labels: Option<LabelVolume>) -> Result<Self> {
        let dims = spatial_dims(image.shape())?;
        let image = if image.rank() == dims.len() {
            let mut shape = vec![1, 1];
            shape.extend_from_slice(&dims);
            image.reshape(&shape)?
        } else {
            image
        };
        if voxel_size.len() != dims.len() || voxel_size.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument(format!("voxel size {voxel_size:?} for {dims:?} volume")));
        }
        if let Some(l) = &labels {
            if l.dims() != dims.as_slice() {
                return Err(Error::ShapeMismatch(format!("labels {:?} vs image {dims:?}", l.dims())));
            }
        }
        Ok(VolumeRecord {
            image,
            voxel_size,
            modality,
            labels,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.image.shape()[2..]
    }
}

/// Min-max rescale to `[-1, 1]`; a constant image maps to zeros.
pub fn normalize_intensity(t: &Tensor) -> Tensor {
    let (lo, hi) = t
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return t.map(|_| 0.0);
    }
    let scale = 2.0 / (hi - lo) as f64;
    t.map(|v| (((v - lo) as f64) * scale - 1.0) as f32)
}
