use xreg_autograd::Tensor;

use super::volume::VolumeRecord;
use crate::error::{Error, Result};
use crate::eval::LabelVolume;
use crate::warp::{continuous_index, grid_sample, mesh};

/// Smallest extent a resampled axis may have.
pub const MIN_EXTENT: usize = 8;

/// Resample onto an isotropic grid with spacing `target_mm`, keeping the
/// field of view. Images are interpolated linearly, labels by nearest voxel.
pub fn resample_isotropic(rec: &VolumeRecord, target_mm: f64) -> Result<VolumeRecord> {
    if !(target_mm.is_finite() && target_mm > 0.0) {
        return Err(Error::InvalidArgument(format!("target spacing {target_mm} mm must be positive")));
    }
    let dims = rec.dims().to_vec();
    let new_dims: Vec<usize> = dims
        .iter()
        .zip(&rec.voxel_size)
        .map(|(&n, &vs)| (n as f64 * vs / target_mm).round() as usize)
        .collect();
    if new_dims.iter().any(|&n| n < MIN_EXTENT) {
        return Err(Error::InvalidArgument(format!(
            "resampling {dims:?} at {:?} mm to {target_mm} mm gives {new_dims:?}, below {MIN_EXTENT} voxels",
            rec.voxel_size
        )));
    }
    // normalized coordinates span the same physical extent on both grids
    let grid = mesh(1, &new_dims);
    let image = grid_sample(&rec.image, &grid)?;
    let labels = rec
        .labels
        .as_ref()
        .map(|l| nearest_labels(l, &grid, &new_dims))
        .transpose()?;
    VolumeRecord::new(image, vec![target_mm; dims.len()], rec.modality, labels)
}

fn nearest_labels(labels: &LabelVolume, grid: &Tensor, new_dims: &[usize]) -> Result<LabelVolume> {
    let dims = labels.dims();
    let d = dims.len();
    let plane: usize = new_dims.iter().product();
    let mut strides = vec![1usize; d];
    for a in (0..d - 1).rev() {
        strides[a] = strides[a + 1] * dims[a + 1];
    }
    let q = grid.data();
    let out = (0..plane)
        .map(|p| {
            let src: usize = (0..d)
                .map(|a| {
                    let i = continuous_index(q[a * plane + p] as f64, dims[a]).round();
                    i.clamp(0.0, (dims[a] - 1) as f64) as usize * strides[a]
                })
                .sum();
            labels.labels()[src]
        })
        .collect();
    LabelVolume::new(new_dims.to_vec(), out, labels.legend().clone())
}
