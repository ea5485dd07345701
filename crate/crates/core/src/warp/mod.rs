//! Spatial transformation algebra.
//!
//! A warp maps each output voxel `p` (normalized coordinates, voxel centres at
//! `(2i+1)/n − 1`) to the sampling location `A·[p; 1] + u(p)`, an affine factor
//! plus a dense residual. Applying it to an image samples the image there.

mod affine;
mod field;

use rand::Rng;
use xreg_autograd::{Graph, Real, Tensor, Var};

pub use affine::{random_affine, random_affine_exact, random_rigid, AffineTransform, ROTATION_PER_MAGNITUDE};
pub use field::{continuous_index, mesh, normalized_coord, random_smooth_field, DisplacementField};

pub(crate) use affine::draw_magnitude;
pub(crate) use field::gaussian_smooth;

use crate::error::{Error, Result};

/// Smoothing width of training and evaluation perturbation fields, voxels.
pub const PERTURB_SIGMA: f64 = 6.0;
/// Peak non-rigid displacement per unit perturbation magnitude, normalized units.
pub const NONRIGID_PER_MAGNITUDE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct FactorisedWarp {
    /// One affine per batch item.
    pub affine: Vec<AffineTransform>,
    pub dense: DisplacementField,
}

impl FactorisedWarp {
    pub fn new(affine: Vec<AffineTransform>, dense: DisplacementField) -> Result<Self> {
        if affine.len() != dense.batch() {
            return Err(Error::ShapeMismatch(format!(
                "{} affines for a batch of {} dense fields",
                affine.len(),
                dense.batch()
            )));
        }
        if affine.iter().any(|a| a.dim() != dense.dims().len()) {
            return Err(Error::ShapeMismatch("affine dimension differs from field rank".into()));
        }
        Ok(FactorisedWarp { affine, dense })
    }

    pub fn identity(batch: usize, dims: &[usize]) -> Self {
        FactorisedWarp {
            affine: vec![AffineTransform::identity(dims.len()); batch],
            dense: DisplacementField::zeros(batch, dims),
        }
    }

    pub fn from_affine(a: AffineTransform, dims: &[usize]) -> Result<Self> {
        Self::new(vec![a], DisplacementField::zeros(1, dims))
    }

    pub fn from_dense(dense: DisplacementField) -> Self {
        let d = dense.dims().len();
        FactorisedWarp {
            affine: vec![AffineTransform::identity(d); dense.batch()],
            dense,
        }
    }

    /// Rebuild from tensors `theta [B,D,D+1]` and `dense [B,D,spatial]`.
    pub fn from_tensors(theta: &Tensor, dense: Tensor) -> Result<Self> {
        let dense = DisplacementField::new(dense)?;
        let d = dense.dims().len();
        if theta.shape() != [dense.batch(), d, d + 1] {
            return Err(Error::ShapeMismatch(format!("theta {:?} for {d}-d field", theta.shape())));
        }
        let affine = theta
            .data()
            .chunks(d * (d + 1))
            .map(|c| AffineTransform::new(d, c.iter().map(|&v| v as f64).collect()))
            .collect::<Result<_>>()?;
        Self::new(affine, dense)
    }

    pub fn batch(&self) -> usize {
        self.affine.len()
    }

    pub fn dims(&self) -> &[usize] {
        self.dense.dims()
    }

    pub fn item(&self, b: usize) -> Result<Self> {
        let a = self
            .affine
            .get(b)
            .ok_or_else(|| Error::ShapeMismatch(format!("batch index {b} of {}", self.batch())))?;
        Ok(FactorisedWarp {
            affine: vec![a.clone()],
            dense: self.dense.item(b)?,
        })
    }

    pub fn theta(&self) -> Tensor {
        let d = self.dims().len();
        let data = self.affine.iter().flat_map(|a| a.matrix().iter().map(|&v| v as f32)).collect();
        Tensor::new(vec![self.batch(), d, d + 1], data).expect("theta shape")
    }

    /// Sampling location of every output voxel, `[B, D, spatial]`.
    pub fn total_map(&self) -> Result<Tensor> {
        let mut g = Graph::<f32>::new();
        let w = WarpVars::constant(&mut g, self)?;
        let t = w.total_map(&mut g)?;
        Ok(g.value(t).clone())
    }
}

/// A factorised warp living on a graph.
#[derive(Clone, Copy, Debug)]
pub struct WarpVars {
    pub theta: Var,
    pub dense: Var,
}

impl WarpVars {
    pub fn constant<T: Real>(g: &mut Graph<T>, w: &FactorisedWarp) -> Result<Self> {
        Ok(WarpVars {
            theta: g.constant(w.theta().cast())?,
            dense: g.constant(w.dense.grid().cast())?,
        })
    }

    pub fn dims<T: Real>(&self, g: &Graph<T>) -> Vec<usize> {
        g.shape(self.dense)[2..].to_vec()
    }

    pub fn affine_grid<T: Real>(&self, g: &mut Graph<T>) -> Result<Var> {
        let b = g.shape(self.dense)[0];
        let dims = self.dims(g);
        affine_grid_var(g, self.theta, b, &dims)
    }

    pub fn total_map<T: Real>(&self, g: &mut Graph<T>) -> Result<Var> {
        let a = self.affine_grid(g)?;
        Ok(g.add(a, self.dense)?)
    }

    pub fn apply<T: Real>(&self, g: &mut Graph<T>, image: Var) -> Result<Var> {
        let grid = self.total_map(g)?;
        Ok(g.grid_sample(image, grid)?)
    }

    /// Affine factor's displacement from the identity, `A·[p;1] − p`.
    pub fn affine_displacement<T: Real>(&self, g: &mut Graph<T>) -> Result<Var> {
        let b = g.shape(self.dense)[0];
        let dims = self.dims(g);
        let grid = self.affine_grid(g)?;
        let id = g.constant(mesh(b, &dims).cast())?;
        Ok(g.sub(grid, id)?)
    }

    /// Full displacement from the identity, affine plus dense.
    pub fn displacement<T: Real>(&self, g: &mut Graph<T>) -> Result<Var> {
        let a = self.affine_displacement(g)?;
        Ok(g.add(a, self.dense)?)
    }
}

/// `theta [B,D,D+1]` applied to the identity mesh.
pub fn affine_grid_var<T: Real>(g: &mut Graph<T>, theta: Var, batch: usize, dims: &[usize]) -> Result<Var> {
    let coords = g.constant(mesh(batch, dims).cast())?;
    Ok(g.affine_points(theta, coords)?)
}

/// Dense field of "apply `inner`, then `outer`": the inner warp's total map is
/// evaluated at the outer warp's sampling locations. The inner affine factor is
/// evaluated exactly there; only its dense part is interpolated.
pub fn compose_vars<T: Real>(g: &mut Graph<T>, outer: &WarpVars, inner: &WarpVars) -> Result<Var> {
    let (os, is) = (g.shape(outer.dense).to_vec(), g.shape(inner.dense).to_vec());
    if os != is {
        return Err(Error::ShapeMismatch(format!("compose {os:?} with {is:?}")));
    }
    let q = outer.total_map(g)?;
    let a = g.affine_points(inner.theta, q)?;
    let u = g.grid_sample(inner.dense, q)?;
    let total = g.add(a, u)?;
    let id = g.constant(mesh(os[0], &os[2..]).cast())?;
    Ok(g.sub(total, id)?)
}

fn check_image(image: &Tensor, w: &FactorisedWarp) -> Result<()> {
    let s = image.shape();
    if s.len() != w.dims().len() + 2 || &s[2..] != w.dims() || s[0] != w.batch() {
        return Err(Error::ShapeMismatch(format!(
            "image {s:?} vs warp of batch {} over {:?}",
            w.batch(),
            w.dims()
        )));
    }
    Ok(())
}

/// `theta` applied to the identity mesh of `dims`, batch one.
pub fn affine_grid(a: &AffineTransform, dims: &[usize]) -> Result<Tensor> {
    if a.dim() != dims.len() {
        return Err(Error::ShapeMismatch(format!("{}-d affine on {dims:?}", a.dim())));
    }
    FactorisedWarp::from_affine(a.clone(), dims)?.total_map()
}

pub fn grid_sample(image: &Tensor, grid: &Tensor) -> Result<Tensor> {
    let mut g = Graph::<f32>::new();
    let (i, q) = (g.constant(image.clone())?, g.constant(grid.clone())?);
    let out = g.grid_sample(i, q)?;
    Ok(g.value(out).clone())
}

pub fn apply_warp(image: &Tensor, w: &FactorisedWarp) -> Result<Tensor> {
    check_image(image, w)?;
    let mut g = Graph::<f32>::new();
    let vars = WarpVars::constant(&mut g, w)?;
    let img = g.constant(image.clone())?;
    let out = vars.apply(&mut g, img)?;
    Ok(g.value(out).clone())
}

pub fn compose(outer: &FactorisedWarp, inner: &FactorisedWarp) -> Result<DisplacementField> {
    let mut g = Graph::<f32>::new();
    let o = WarpVars::constant(&mut g, outer)?;
    let i = WarpVars::constant(&mut g, inner)?;
    let c = compose_vars(&mut g, &o, &i)?;
    DisplacementField::new(g.value(c).clone())
}

/// Fixed-point inverse `v ← −u(p + v(p))`, starting from `v = −u`.
pub fn invert_dense(field: &DisplacementField, iters: usize) -> Result<DisplacementField> {
    if iters == 0 {
        return Err(Error::InvalidArgument("invert_dense needs at least one iteration".into()));
    }
    let (b, dims) = (field.batch(), field.dims().to_vec());
    let id = mesh(b, &dims);
    let neg = |t: &Tensor| t.map(|v| -v);
    let mut v = neg(field.grid());
    for _ in 0..iters {
        let mut q = id.clone();
        for (q, dv) in q.data_mut().iter_mut().zip(v.data()) {
            *q += dv;
        }
        v = neg(&grid_sample(field.grid(), &q)?);
    }
    DisplacementField::new(v)
}

/// Determinant of the Jacobian of the total map, in voxel units, `[B,1,spatial]`.
pub fn jacobian_determinant(w: &FactorisedWarp) -> Result<Tensor> {
    let dims = w.dims().to_vec();
    if dims.iter().any(|&n| n < 3) {
        return Err(Error::InvalidArgument(format!("jacobian needs extent >= 3 per axis, got {dims:?}")));
    }
    let total = w.total_map()?;
    let d = dims.len();
    let plane: usize = dims.iter().product();
    let mut strides = vec![1usize; d];
    for a in (0..d - 1).rev() {
        strides[a] = strides[a + 1] * dims[a + 1];
    }
    let b = w.batch();
    let mut out = vec![0.0f32; b * plane];
    let data = total.data();
    for bi in 0..b {
        // voxel-index position of the mapped point, per component
        let idx = |c: usize, p: usize| continuous_index(data[(bi * d + c) * plane + p] as f64, dims[c]);
        for p in 0..plane {
            let mut j = [[0.0f64; 3]; 3];
            for a in 0..d {
                let i = (p / strides[a]) % dims[a];
                let (lo, hi, span) = if i == 0 {
                    (p, p + strides[a], 1.0)
                } else if i == dims[a] - 1 {
                    (p - strides[a], p, 1.0)
                } else {
                    (p - strides[a], p + strides[a], 2.0)
                };
                for (c, row) in j.iter_mut().enumerate().take(d) {
                    row[a] = (idx(c, hi) - idx(c, lo)) / span;
                }
            }
            out[bi * plane + p] = det(&j, d) as f32;
        }
    }
    let mut shape = vec![b, 1];
    shape.extend_from_slice(&dims);
    Ok(Tensor::new(shape, out)?)
}

fn det(j: &[[f64; 3]; 3], d: usize) -> f64 {
    if d == 2 {
        j[0][0] * j[1][1] - j[0][1] * j[1][0]
    } else {
        j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
            + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0])
    }
}

/// Random affine plus smooth non-rigid perturbation sharing one magnitude draw.
pub fn random_perturbation<R: Rng + ?Sized>(rng: &mut R, dims: &[usize], magnitude: [f64; 2]) -> Result<FactorisedWarp> {
    affine::check_dim(dims.len())?;
    let m = draw_magnitude(rng, magnitude)?;
    let a = random_affine_exact(rng, dims.len(), m);
    let dense = random_smooth_field(rng, dims, PERTURB_SIGMA, m * NONRIGID_PER_MAGNITUDE)?;
    FactorisedWarp::new(vec![a], dense)
}

/// Interior voxels: every index at least one voxel away from each border.
pub fn interior_mask(dims: &[usize]) -> Vec<bool> {
    let plane: usize = dims.iter().product();
    let d = dims.len();
    let mut strides = vec![1usize; d];
    for a in (0..d.saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * dims[a + 1];
    }
    (0..plane)
        .map(|p| (0..d).all(|a| {
            let i = (p / strides[a]) % dims[a];
            i > 0 && i + 1 < dims[a]
        }))
        .collect()
}
