use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::warp::{compose, interior_mask, jacobian_determinant, DisplacementField, FactorisedWarp};

/// Residual statistics in voxels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Consistency {
    pub mean: f64,
    pub max: f64,
}

/// Interior displacement norms of a field, converted to voxels.
fn interior_voxel_norms(field: &DisplacementField, out: &mut Vec<f64>) {
    let dims = field.dims();
    let (b, d) = (field.batch(), dims.len());
    let plane: usize = dims.iter().product();
    let mask = interior_mask(dims);
    let data = field.grid().data();
    for bi in 0..b {
        for (p, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            let sq: f64 = (0..d)
                .map(|a| {
                    // normalized units span 2 over n voxels
                    let v = data[(bi * d + a) * plane + p] as f64 * dims[a] as f64 * 0.5;
                    v * v
                })
                .sum();
            out.push(sq.sqrt());
        }
    }
}

/// How far the forward and backward warps are from inverting each other.
pub fn inverse_consistency_error(phi_f: &FactorisedWarp, phi_b: &FactorisedWarp) -> Result<Consistency> {
    if phi_f.dims() != phi_b.dims() || phi_f.batch() != phi_b.batch() {
        return Err(Error::ShapeMismatch(format!(
            "warps over {:?} x{} and {:?} x{}",
            phi_f.dims(),
            phi_f.batch(),
            phi_b.dims(),
            phi_b.batch()
        )));
    }
    let mut norms = Vec::new();
    interior_voxel_norms(&compose(phi_f, phi_b)?, &mut norms);
    interior_voxel_norms(&compose(phi_b, phi_f)?, &mut norms);
    if norms.is_empty() {
        return Ok(Consistency::default());
    }
    Ok(Consistency {
        mean: norms.iter().sum::<f64>() / norms.len() as f64,
        max: norms.iter().copied().fold(0.0, f64::max),
    })
}

/// Fraction of interior voxels whose Jacobian determinant is not positive.
pub fn folding_fraction(w: &FactorisedWarp) -> Result<f64> {
    let jac = jacobian_determinant(w)?;
    let mask = interior_mask(w.dims());
    let plane = mask.len();
    let (mut folded, mut total) = (0usize, 0usize);
    for (i, &j) in jac.data().iter().enumerate() {
        if mask[i % plane] {
            total += 1;
            if j <= 0.0 {
                folded += 1;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { folded as f64 / total as f64 })
}
