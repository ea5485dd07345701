use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest rotation, in radians, that a perturbation of magnitude 1 may draw.
pub const ROTATION_PER_MAGNITUDE: f64 = std::f64::consts::FRAC_PI_4;

/// `D×(D+1)` matrix on normalized coordinates, row-major, last column is the
/// translation. Rows and columns follow tensor axis order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    dim: usize,
    matrix: Vec<f64>,
}

impl AffineTransform {
    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * (dim + 1)];
        for i in 0..dim {
            matrix[i * (dim + 1) + i] = 1.0;
        }
        AffineTransform { dim, matrix }
    }

    pub fn new(dim: usize, matrix: Vec<f64>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidArgument(format!("affine dimension {dim}, expected 2 or 3")));
        }
        if matrix.len() != dim * (dim + 1) {
            return Err(Error::ShapeMismatch(format!(
                "{dim}-d affine needs {} entries, got {}",
                dim * (dim + 1),
                matrix.len()
            )));
        }
        let a = AffineTransform { dim, matrix };
        if !a.matrix.iter().all(|v| v.is_finite()) || a.det().abs() <= 1e-8 {
            return Err(Error::InvalidArgument("affine linear block is singular".into()));
        }
        Ok(a)
    }

    pub fn translation(t: &[f64]) -> Self {
        let mut a = Self::identity(t.len());
        for (i, &v) in t.iter().enumerate() {
            a.matrix[i * (t.len() + 1) + t.len()] = v;
        }
        a
    }

    /// Per-axis scaling about the origin.
    pub fn scaling(s: &[f64]) -> Self {
        let mut a = Self::identity(s.len());
        for (i, &v) in s.iter().enumerate() {
            a.matrix[i * (s.len() + 1) + i] = v;
        }
        a
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.matrix[row * (self.dim + 1) + col]
    }

    pub fn translation_part(&self) -> Vec<f64> {
        (0..self.dim).map(|r| self.get(r, self.dim)).collect()
    }

    pub fn det(&self) -> f64 {
        let m = |r, c| self.get(r, c);
        match self.dim {
            2 => m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0),
            _ => {
                m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1))
                    - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
                    + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0))
            }
        }
    }

    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|r| (0..self.dim).map(|c| self.get(r, c) * p[c]).sum::<f64>() + self.get(r, self.dim))
            .collect()
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn after(&self, inner: &AffineTransform) -> AffineTransform {
        let d = self.dim;
        let mut out = vec![0.0; d * (d + 1)];
        for r in 0..d {
            for c in 0..=d {
                let mut v: f64 = (0..d).map(|k| self.get(r, k) * inner.get(k, c)).sum();
                if c == d {
                    v += self.get(r, d);
                }
                out[r * (d + 1) + c] = v;
            }
        }
        AffineTransform { dim: d, matrix: out }
    }

    pub fn inverse(&self) -> Result<AffineTransform> {
        let d = self.dim;
        // Gauss-Jordan on the linear block.
        let mut a: Vec<f64> = (0..d).flat_map(|r| (0..d).map(move |c| (r, c))).map(|(r, c)| self.get(r, c)).collect();
        let mut inv = vec![0.0; d * d];
        for i in 0..d {
            inv[i * d + i] = 1.0;
        }
        for col in 0..d {
            let pivot = (col..d)
                .max_by(|&x, &y| a[x * d + col].abs().total_cmp(&a[y * d + col].abs()))
                .unwrap_or(col);
            if a[pivot * d + col].abs() <= 1e-12 {
                return Err(Error::InvalidArgument("affine linear block is singular".into()));
            }
            for k in 0..d {
                a.swap(col * d + k, pivot * d + k);
                inv.swap(col * d + k, pivot * d + k);
            }
            let p = a[col * d + col];
            for k in 0..d {
                a[col * d + k] /= p;
                inv[col * d + k] /= p;
            }
            for r in 0..d {
                if r != col {
                    let f = a[r * d + col];
                    for k in 0..d {
                        a[r * d + k] -= f * a[col * d + k];
                        inv[r * d + k] -= f * inv[col * d + k];
                    }
                }
            }
        }
        let t = self.translation_part();
        let mut out = vec![0.0; d * (d + 1)];
        for r in 0..d {
            for c in 0..d {
                out[r * (d + 1) + c] = inv[r * d + c];
            }
            out[r * (d + 1) + d] = -(0..d).map(|k| inv[r * d + k] * t[k]).sum::<f64>();
        }
        Ok(AffineTransform { dim: d, matrix: out })
    }

    /// Largest per-axis change: `max(|scale_i − 1|, |t_i|)` where the scale of
    /// axis `i` is the norm of column `i` of the linear block.
    pub fn max_axis_change(&self) -> f64 {
        let d = self.dim;
        let mut m: f64 = 0.0;
        for c in 0..d {
            let norm = (0..d).map(|r| self.get(r, c).powi(2)).sum::<f64>().sqrt();
            m = m.max((norm - 1.0).abs());
        }
        self.translation_part().iter().fold(m, |m, t| m.max(t.abs()))
    }
}

fn check_range(range: [f64; 2]) -> Result<()> {
    let [lo, hi] = range;
    if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi && hi < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "magnitude range [{lo}, {hi}] must satisfy 0 <= lo <= hi < 1"
        )));
    }
    Ok(())
}

pub(crate) fn draw_magnitude<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> Result<f64> {
    check_range(range)?;
    Ok(if range[1] > range[0] {
        rng.random_range(range[0]..=range[1])
    } else {
        range[0]
    })
}

/// Rotation matrix for angle `theta` about a unit `axis` (3-d) or in the plane (2-d).
fn rotation(dim: usize, theta: f64, axis: [f64; 3]) -> Vec<f64> {
    let (s, c) = theta.sin_cos();
    if dim == 2 {
        return vec![c, -s, s, c];
    }
    let [x, y, z] = axis;
    let t = 1.0 - c;
    vec![
        t * x * x + c,
        t * x * y - s * z,
        t * x * z + s * y,
        t * x * y + s * z,
        t * y * y + c,
        t * y * z - s * x,
        t * x * z - s * y,
        t * y * z + s * x,
        t * z * z + c,
    ]
}

fn random_axis<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0f64),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-3 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, m: f64) -> f64 {
    if m > 0.0 {
        rng.random_range(-m..=m)
    } else {
        0.0
    }
}

fn assemble(dim: usize, rot: &[f64], scale: &[f64], t: &[f64]) -> AffineTransform {
    let mut matrix = vec![0.0; dim * (dim + 1)];
    for r in 0..dim {
        for c in 0..dim {
            matrix[r * (dim + 1) + c] = rot[r * dim + c] * scale[c];
        }
        matrix[r * (dim + 1) + dim] = t[r];
    }
    AffineTransform { dim, matrix }
}

/// Random affine with an exact magnitude `m`: per-axis scale in `[1−m, 1+m]`,
/// translation in `[−m, m]`, rotation within `m·π/4`. One randomly chosen
/// scale or translation component is pushed to exactly `±m`.
pub fn random_affine_exact<R: Rng + ?Sized>(rng: &mut R, dim: usize, m: f64) -> AffineTransform {
    let mut scale: Vec<f64> = (0..dim).map(|_| 1.0 + symmetric(rng, m)).collect();
    let mut t: Vec<f64> = (0..dim).map(|_| symmetric(rng, m)).collect();
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let pick = rng.random_range(0..2 * dim);
    if pick < dim {
        scale[pick] = 1.0 + sign * m;
    } else {
        t[pick - dim] = sign * m;
    }
    let theta = symmetric(rng, m * ROTATION_PER_MAGNITUDE);
    let axis = if dim == 3 { random_axis(rng) } else { [0.0, 0.0, 1.0] };
    assemble(dim, &rotation(dim, theta, axis), &scale, &t)
}

pub fn random_affine<R: Rng + ?Sized>(rng: &mut R, dim: usize, magnitude: [f64; 2]) -> Result<AffineTransform> {
    check_dim(dim)?;
    let m = draw_magnitude(rng, magnitude)?;
    Ok(random_affine_exact(rng, dim, m))
}

/// Rotation plus translation only, with the same magnitude semantics.
pub fn random_rigid<R: Rng + ?Sized>(rng: &mut R, dim: usize, magnitude: [f64; 2]) -> Result<AffineTransform> {
    check_dim(dim)?;
    let m = draw_magnitude(rng, magnitude)?;
    let t: Vec<f64> = (0..dim).map(|_| symmetric(rng, m)).collect();
    let theta = symmetric(rng, m * ROTATION_PER_MAGNITUDE);
    let axis = if dim == 3 { random_axis(rng) } else { [0.0, 0.0, 1.0] };
    Ok(assemble(dim, &rotation(dim, theta, axis), &vec![1.0; dim], &t))
}

pub(crate) fn check_dim(dim: usize) -> Result<()> {
    if dim == 2 || dim == 3 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("spatial rank {dim}, expected 2 or 3")))
    }
}
