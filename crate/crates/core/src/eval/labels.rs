use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use xreg_autograd::Tensor;

use crate::error::{Error, Result};
use crate::warp::{continuous_index, FactorisedWarp};

/// Integer label grid; 0 is background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelVolume {
    dims: Vec<usize>,
    labels: Vec<u16>,
    legend: BTreeMap<u16, String>,
}

impl LabelVolume {
    pub fn new(dims: Vec<usize>, labels: Vec<u16>, legend: BTreeMap<u16, String>) -> Result<Self> {
        if dims.iter().product::<usize>() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "label grid {dims:?} needs {} values, got {}",
                dims.iter().product::<usize>(),
                labels.len()
            )));
        }
        Ok(LabelVolume { dims, labels, legend })
    }

    /// From a float tensor shaped `[spatial]` or `[1, 1, spatial]`.
    pub fn from_tensor(t: &Tensor, legend: BTreeMap<u16, String>) -> Result<Self> {
        let labels = t
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 && v <= u16::MAX as f32 {
                    Ok(v as u16)
                } else {
                    Err(Error::InvalidArgument(format!("label value {v} is not a non-negative integer")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let dims = spatial_dims(t.shape())?;
        Self::new(dims, labels, legend)
    }

    /// As a `[1, 1, dims...]` float tensor.
    pub fn to_tensor(&self) -> Tensor {
        let mut shape = vec![1, 1];
        shape.extend_from_slice(&self.dims);
        Tensor::new(shape, self.labels.iter().map(|&l| l as f32).collect()).expect("label shape")
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn legend(&self) -> &BTreeMap<u16, String> {
        &self.legend
    }

    pub fn count(&self, label: u16) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Legend label with the most voxels.
    pub fn largest_structure(&self) -> Option<u16> {
        self.legend.keys().copied().max_by_key(|&l| (self.count(l), std::cmp::Reverse(l)))
    }

    pub fn relabel(&self, map: impl Fn(u16) -> u16) -> Self {
        LabelVolume {
            dims: self.dims.clone(),
            labels: self.labels.iter().map(|&l| map(l)).collect(),
            legend: self.legend.iter().map(|(&k, v)| (map(k), v.clone())).collect(),
        }
    }
}

/// `2|A∩B| / (|A|+|B|)`; 1.0 when both masks are empty.
pub fn dice(a: &LabelVolume, b: &LabelVolume, label: u16) -> Result<f64> {
    if a.dims != b.dims {
        return Err(Error::ShapeMismatch(format!("labels {:?} vs {:?}", a.dims, b.dims)));
    }
    if !a.legend.contains_key(&label) && !b.legend.contains_key(&label) {
        return Err(Error::InvalidArgument(format!("label {label} is not in the legend")));
    }
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.labels.iter().zip(&b.labels) {
        let (ia, ib) = (x == label, y == label);
        na += ia as usize;
        nb += ib as usize;
        both += (ia && ib) as usize;
    }
    Ok(if na + nb == 0 { 1.0 } else { 2.0 * both as f64 / (na + nb) as f64 })
}

/// Nearest-neighbour resampling through the warp's sampling map, with the
/// same border clamping as image warping.
pub fn warp_labels(labels: &LabelVolume, w: &FactorisedWarp) -> Result<LabelVolume> {
    if w.batch() != 1 || w.dims() != labels.dims.as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "labels {:?} vs warp of batch {} over {:?}",
            labels.dims,
            w.batch(),
            w.dims()
        )));
    }
    let dims = &labels.dims;
    let d = dims.len();
    let plane = labels.labels.len();
    let total = w.total_map()?;
    let q = total.data();
    let mut strides = vec![1usize; d];
    for a in (0..d - 1).rev() {
        strides[a] = strides[a + 1] * dims[a + 1];
    }
    let out = (0..plane)
        .map(|p| {
            let src: usize = (0..d)
                .map(|a| {
                    let i = continuous_index(q[a * plane + p] as f64, dims[a]).round();
                    i.clamp(0.0, (dims[a] - 1) as f64) as usize * strides[a]
                })
                .sum();
            labels.labels[src]
        })
        .collect();
    LabelVolume::new(dims.clone(), out, labels.legend.clone())
}

/// Spatial extents of a `[spatial]` or `[1, 1, spatial]` shape with 2 or 3
/// spatial axes.
pub fn spatial_dims(shape: &[usize]) -> Result<Vec<usize>> {
    match shape {
        [_, _] | [_, _, _] => Ok(shape.to_vec()),
        [1, 1, rest @ ..] if rest.len() == 2 || rest.len() == 3 => Ok(rest.to_vec()),
        _ => Err(Error::ShapeMismatch(format!(
            "expected a 2-d or 3-d volume, optionally with unit batch and channel axes, got {shape:?}"
        ))),
    }
}
