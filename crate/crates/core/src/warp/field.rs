use rand::Rng;
use rand_distr::StandardNormal;
use xreg_autograd::Tensor;

use crate::error::{Error, Result};
use crate::warp::affine::check_dim;

/// Displacements `[B, D, spatial...]` in normalized units; channel `i` moves
/// along spatial axis `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    grid: Tensor,
}

impl DisplacementField {
    pub fn new(grid: Tensor) -> Result<Self> {
        let s = grid.shape();
        if s.len() < 4 || s.len() > 5 || s[1] != s.len() - 2 {
            return Err(Error::ShapeMismatch(format!(
                "displacement field {s:?} needs [B, D, spatial] with D spatial axes"
            )));
        }
        Ok(DisplacementField { grid })
    }

    pub fn zeros(batch: usize, dims: &[usize]) -> Self {
        let mut shape = vec![batch, dims.len()];
        shape.extend_from_slice(dims);
        DisplacementField {
            grid: Tensor::zeros(&shape),
        }
    }

    pub fn grid(&self) -> &Tensor {
        &self.grid
    }

    pub fn into_grid(self) -> Tensor {
        self.grid
    }

    pub fn batch(&self) -> usize {
        self.grid.shape()[0]
    }

    pub fn dims(&self) -> &[usize] {
        &self.grid.shape()[2..]
    }

    pub fn item(&self, b: usize) -> Result<Self> {
        Ok(DisplacementField {
            grid: self.grid.batch_item(b)?,
        })
    }

    /// Largest displacement vector norm over the whole field.
    pub fn max_norm(&self) -> f64 {
        vector_norms(&self.grid).into_iter().fold(0.0, f64::max)
    }
}

/// Per-voxel vector norms of a `[B, D, spatial]` tensor, batch-major.
pub(crate) fn vector_norms(grid: &Tensor) -> Vec<f64> {
    let (b, d) = (grid.shape()[0], grid.shape()[1]);
    let plane: usize = grid.shape()[2..].iter().product();
    let data = grid.data();
    let mut out = Vec::with_capacity(b * plane);
    for bi in 0..b {
        for p in 0..plane {
            let sq: f64 = (0..d)
                .map(|a| (data[(bi * d + a) * plane + p] as f64).powi(2))
                .sum();
            out.push(sq.sqrt());
        }
    }
    out
}

/// Normalized voxel-centre coordinate of index `i` on an axis of `n` samples.
pub fn normalized_coord(i: usize, n: usize) -> f64 {
    (2.0 * i as f64 + 1.0) / n as f64 - 1.0
}

/// Inverse of [`normalized_coord`], as a continuous index.
pub fn continuous_index(g: f64, n: usize) -> f64 {
    ((g + 1.0) * n as f64 - 1.0) * 0.5
}

/// Identity sampling grid `[batch, D, dims...]`.
pub fn mesh(batch: usize, dims: &[usize]) -> Tensor {
    let d = dims.len();
    let plane: usize = dims.iter().product();
    let mut shape = vec![batch, d];
    shape.extend_from_slice(dims);
    let mut data = vec![0.0f32; batch * d * plane];
    let mut strides = vec![1usize; d];
    for a in (0..d.saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * dims[a + 1];
    }
    for b in 0..batch {
        for a in 0..d {
            let base = (b * d + a) * plane;
            for p in 0..plane {
                let i = (p / strides[a]) % dims[a];
                data[base + p] = normalized_coord(i, dims[a]) as f32;
            }
        }
    }
    Tensor::new(shape, data).expect("mesh shape")
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian smoothing of a single `dims`-shaped plane, replicating
/// edge values beyond the border.
pub(crate) fn gaussian_smooth(plane: &mut [f64], dims: &[usize], sigma: f64) {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let mut scratch = vec![0.0; plane.len()];
    for a in 0..dims.len() {
        let n = dims[a];
        let inner: usize = dims[a + 1..].iter().product();
        let outer: usize = dims[..a].iter().product();
        for o in 0..outer {
            for k in 0..inner {
                let at = |i: usize| (o * n + i) * inner + k;
                for i in 0..n {
                    let mut acc = 0.0;
                    for (j, w) in kernel.iter().enumerate() {
                        let src = (i as isize + j as isize - radius).clamp(0, n as isize - 1) as usize;
                        acc += w * plane[at(src)];
                    }
                    scratch[at(i)] = acc;
                }
            }
        }
        plane.copy_from_slice(&scratch);
    }
}

/// Gaussian-smoothed white noise, rescaled so its largest vector norm is
/// exactly `amplitude`. `sigma` is in voxels.
pub fn random_smooth_field<R: Rng + ?Sized>(
    rng: &mut R,
    dims: &[usize],
    sigma: f64,
    amplitude: f64,
) -> Result<DisplacementField> {
    check_dim(dims.len())?;
    if !(sigma >= 1.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma {sigma} must be >= 1 voxel")));
    }
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(Error::InvalidArgument(format!("amplitude {amplitude} must be >= 0")));
    }
    let d = dims.len();
    let plane: usize = dims.iter().product();
    let mut channels: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..plane).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    for c in channels.iter_mut() {
        gaussian_smooth(c, dims, sigma);
    }
    let max = (0..plane)
        .map(|p| channels.iter().map(|c| c[p] * c[p]).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let factor = if max > 0.0 { amplitude / max } else { 0.0 };
    let data: Vec<f32> = channels
        .iter()
        .flat_map(|c| c.iter().map(move |v| (v * factor) as f32))
        .collect();
    let mut shape = vec![1, d];
    shape.extend_from_slice(dims);
    DisplacementField::new(Tensor::new(shape, data)?)
}
