//! Synthetic co-registered bimodal phantoms.
//!
//! One anatomy of nested smooth blobs is rendered twice. Modality A carries
//! the blob intensities plus fine texture. Modality B applies a monotone
//! nonlinear remap to the same anatomy with one structure's contrast removed.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use super::volume::{Modality, VolumeRecord};
use crate::error::{Error, Result};
use crate::eval::LabelVolume;
use crate::warp::{gaussian_smooth, normalized_coord};

/// Mean intensity of each label in modality A; label 1 is the enclosing
/// structure. Labels past the table cycle through its tail.
const LEVELS: [f64; 7] = [0.0, 0.45, 0.85, 0.2, 0.65, 0.3, 0.95];
/// Structure whose contrast modality B suppresses.
pub const SUPPRESSED_LABEL: u16 = 2;
const LEVEL_JITTER: f64 = 0.03;
const TEXTURE_STD: f64 = 0.04;
/// Width of the soft blob edge, in units of the normalized blob radius.
const EDGE: f64 = 0.04;

pub fn structure_name(label: u16) -> String {
    match label {
        1 => "WHM".into(),
        2 => "Ce".into(),
        3 => "BS".into(),
        l => format!("S{l}"),
    }
}

fn level(label: u16) -> f64 {
    let l = label as usize;
    if l < LEVELS.len() {
        LEVELS[l]
    } else {
        LEVELS[4 + (l - 4) % 3]
    }
}

/// Modality B's monotone remap.
fn remap(v: f64) -> f64 {
    v.max(0.0).sqrt()
}

struct Blob {
    centre: Vec<f64>,
    radii: Vec<f64>,
    /// Row-major rotation into the blob frame.
    rot: Vec<f64>,
    waves: Vec<(Vec<f64>, f64, f64)>,
}

impl Blob {
    /// Normalized radius: below 1 inside.
    fn radius(&self, p: &[f64]) -> f64 {
        let d = p.len();
        let rel: Vec<f64> = (0..d).map(|i| p[i] - self.centre[i]).collect();
        let mut r2 = 0.0;
        for i in 0..d {
            let q: f64 = (0..d).map(|j| self.rot[i * d + j] * rel[j]).sum();
            r2 += (q / self.radii[i]).powi(2);
        }
        let wobble: f64 = self
            .waves
            .iter()
            .map(|(w, phase, amp)| amp * (w.iter().zip(&rel).map(|(a, b)| a * b).sum::<f64>() + phase).cos())
            .sum();
        r2.sqrt() * (1.0 + wobble)
    }
}

fn rotation<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let (s, c) = theta.sin_cos();
    if d == 2 {
        return vec![c, -s, s, c];
    }
    let mut axis: Vec<f64> = (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let n = axis.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
    axis.iter_mut().for_each(|v| *v /= n);
    let (x, y, z) = (axis[0], axis[1], axis[2]);
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

fn random_blob<R: Rng + ?Sized>(rng: &mut R, d: usize, centre: Vec<f64>, radius: (f64, f64)) -> Blob {
    let radii = (0..d).map(|_| rng.random_range(radius.0..radius.1)).collect();
    let rot = rotation(rng, d);
    let waves = (0..3)
        .map(|_| {
            let w = (0..d).map(|_| rng.random_range(-4.0..4.0)).collect();
            (w, rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..0.05))
        })
        .collect();
    Blob {
        centre,
        radii,
        rot,
        waves,
    }
}

fn point_offset<R: Rng + ?Sized>(rng: &mut R, d: usize, max: f64) -> Vec<f64> {
    let dir: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
    let r = max * rng.random_range(0.0f64..1.0).powf(1.0 / d as f64);
    dir.iter().map(|v| v / n * r).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomPair {
    pub a: VolumeRecord,
    pub b: VolumeRecord,
    pub labels: LabelVolume,
}

/// Draw one co-registered phantom pair with `complexity` structures on a
/// cube of `size` voxels per axis (`rank` axes), unit voxel size.
pub fn gen_phantom_pair<R: Rng + ?Sized>(rng: &mut R, size: usize, rank: usize, complexity: usize) -> Result<PhantomPair> {
    if size < 16 || !size.is_multiple_of(8) {
        return Err(Error::InvalidArgument(format!("phantom size {size} must be a multiple of 8, at least 16")));
    }
    if rank != 2 && rank != 3 {
        return Err(Error::InvalidArgument(format!("phantom rank {rank}, expected 2 or 3")));
    }
    if complexity == 0 || complexity > u16::MAX as usize {
        return Err(Error::InvalidArgument("phantom complexity must be >= 1".into()));
    }
    let d = rank;
    let head_centre: Vec<f64> = (0..d).map(|_| rng.random_range(-0.08..0.08)).collect();
    let mut blobs = vec![random_blob(rng, d, head_centre.clone(), (0.38, 0.52))];
    for _ in 1..complexity {
        let off = point_offset(rng, d, 0.18);
        let c = head_centre.iter().zip(off).map(|(a, b)| a + b).collect();
        blobs.push(random_blob(rng, d, c, (0.09, 0.17)));
    }
    let levels_a: Vec<f64> = (0..=complexity as u16)
        .map(|l| if l == 0 { 0.0 } else { level(l) + rng.random_range(-LEVEL_JITTER..LEVEL_JITTER) })
        .collect();
    let levels_b: Vec<f64> = levels_a
        .iter()
        .enumerate()
        .map(|(l, &v)| remap(if l as u16 == SUPPRESSED_LABEL { levels_a[1] } else { v }))
        .collect();

    let dims = vec![size; d];
    let plane: usize = dims.iter().product();
    let mut noise: Vec<f64> = (0..plane).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    gaussian_smooth(&mut noise, &dims, 1.0);
    let std = (noise.iter().map(|v| v * v).sum::<f64>() / plane as f64).sqrt().max(1e-12);

    let mut img_a = vec![0.0f32; plane];
    let mut img_b = vec![0.0f32; plane];
    let mut labels = vec![0u16; plane];
    let mut p = vec![0.0; d];
    for (idx, ((va, vb), lab)) in img_a.iter_mut().zip(img_b.iter_mut()).zip(labels.iter_mut()).enumerate() {
        let mut rem = idx;
        for a in (0..d).rev() {
            p[a] = normalized_coord(rem % size, size);
            rem /= size;
        }
        let (mut ia, mut ib, mut fg) = (0.0, 0.0, 0.0f64);
        for (k, blob) in blobs.iter().enumerate() {
            let r = blob.radius(&p);
            let m = 1.0 / (1.0 + ((r - 1.0) / EDGE).exp());
            let l = k + 1;
            ia = ia * (1.0 - m) + levels_a[l] * m;
            ib = ib * (1.0 - m) + levels_b[l] * m;
            if k == 0 {
                fg = m;
            }
            if r < 1.0 {
                *lab = l as u16;
            }
        }
        *va = (ia + TEXTURE_STD * noise[idx] / std * fg).clamp(0.0, 1.0) as f32;
        *vb = ib.clamp(0.0, 1.0) as f32;
    }
    let legend: BTreeMap<u16, String> = (1..=complexity as u16).map(|l| (l, structure_name(l))).collect();
    let labels = LabelVolume::new(dims.clone(), labels, legend)?;
    let mut shape = vec![1, 1];
    shape.extend_from_slice(&dims);
    let tensor = |v: Vec<f32>| xreg_autograd::Tensor::new(shape.clone(), v);
    let voxel = vec![1.0; d];
    Ok(PhantomPair {
        a: VolumeRecord::new(tensor(img_a)?, voxel.clone(), Modality::A, Some(labels.clone()))?,
        b: VolumeRecord::new(tensor(img_b)?, voxel, Modality::B, Some(labels.clone()))?,
        labels,
    })
}
