//! Linear interpolation kernels: separable upsampling and grid sampling.
//!
//! Both use the align-corners-false convention: a normalized coordinate `g`
//! in `[-1, 1]` on an axis of `n` samples maps to the continuous index
//! `((g + 1) * n - 1) / 2`, so `-1` and `1` sit on the outer edges of the
//! first and last sample rather than on their centres.

use crate::real::Real;

/// Per output index: (lower source, upper source, weight of upper).
pub(crate) type Taps = Vec<(usize, usize, f64)>;

pub(crate) fn upsample_taps(n_in: usize, factor: usize) -> Taps {
    let scale = 1.0 / factor as f64;
    (0..n_in * factor)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Resample the middle axis of a `[outer, n_in, inner]` block.
pub(crate) fn resample_axis<T: Real>(data: &[T], outer: usize, n_in: usize, inner: usize, taps: &Taps) -> Vec<T> {
    let n_out = taps.len();
    let mut out = vec![T::zero(); outer * n_out * inner];
    for o in 0..outer {
        let src = &data[o * n_in * inner..(o + 1) * n_in * inner];
        let dst = &mut out[o * n_out * inner..(o + 1) * n_out * inner];
        for (j, &(i0, i1, w)) in taps.iter().enumerate() {
            let (w0, w1) = (T::lit(1.0 - w), T::lit(w));
            let d = &mut dst[j * inner..(j + 1) * inner];
            let a = &src[i0 * inner..(i0 + 1) * inner];
            let b = &src[i1 * inner..(i1 + 1) * inner];
            for ((d, &a), &b) in d.iter_mut().zip(a).zip(b) {
                *d = w0 * a + w1 * b;
            }
        }
    }
    out
}

/// Adjoint of [`resample_axis`].
pub(crate) fn resample_axis_adjoint<T: Real>(
    grad: &[T],
    outer: usize,
    n_in: usize,
    inner: usize,
    taps: &Taps,
) -> Vec<T> {
    let n_out = taps.len();
    let mut out = vec![T::zero(); outer * n_in * inner];
    for o in 0..outer {
        let src = &grad[o * n_out * inner..(o + 1) * n_out * inner];
        let dst = &mut out[o * n_in * inner..(o + 1) * n_in * inner];
        for (j, &(i0, i1, w)) in taps.iter().enumerate() {
            let (w0, w1) = (T::lit(1.0 - w), T::lit(w));
            let g = &src[j * inner..(j + 1) * inner];
            for (k, &gv) in g.iter().enumerate() {
                dst[i0 * inner + k] += w0 * gv;
                dst[i1 * inner + k] += w1 * gv;
            }
        }
    }
    out
}

/// Shapes before each axis pass of an upsample, plus the final shape.
pub(crate) fn upsample_stages(shape: &[usize], factor: usize) -> Vec<Vec<usize>> {
    let mut stages = vec![shape.to_vec()];
    let mut cur = shape.to_vec();
    for a in 2..shape.len() {
        cur[a] *= factor;
        stages.push(cur.clone());
    }
    stages
}

pub(crate) fn upsample_forward<T: Real>(data: &[T], shape: &[usize], factor: usize) -> Vec<T> {
    if factor == 1 {
        return data.to_vec();
    }
    let stages = upsample_stages(shape, factor);
    let mut cur = data.to_vec();
    for a in 2..shape.len() {
        let s = &stages[a - 2];
        let outer: usize = s[..a].iter().product();
        let inner: usize = s[a + 1..].iter().product();
        cur = resample_axis(&cur, outer, s[a], inner, &upsample_taps(s[a], factor));
    }
    cur
}

pub(crate) fn upsample_backward<T: Real>(grad: &[T], shape: &[usize], factor: usize) -> Vec<T> {
    if factor == 1 {
        return grad.to_vec();
    }
    let stages = upsample_stages(shape, factor);
    let mut cur = grad.to_vec();
    for a in (2..shape.len()).rev() {
        let s = &stages[a - 2];
        let outer: usize = s[..a].iter().product();
        let inner: usize = s[a + 1..].iter().product();
        cur = resample_axis_adjoint(&cur, outer, s[a], inner, &upsample_taps(s[a], factor));
    }
    cur
}

/// One axis of a sampling location: lower/upper indices, weight of upper, and
/// whether the coordinate fell inside the image (clamped otherwise).
#[derive(Clone, Copy)]
struct AxisSample {
    i0: usize,
    i1: usize,
    frac: f64,
    inside: bool,
}

#[inline]
fn axis_sample(g: f64, n: usize) -> AxisSample {
    let hi = (n - 1) as f64;
    let x = ((g + 1.0) * n as f64 - 1.0) * 0.5;
    let inside = (0.0..=hi).contains(&x);
    let x = x.clamp(0.0, hi);
    if n == 1 {
        return AxisSample {
            i0: 0,
            i1: 0,
            frac: 0.0,
            inside: false,
        };
    }
    let mut i0 = x.floor() as usize;
    if i0 >= n - 1 {
        i0 = n - 2;
    }
    AxisSample {
        i0,
        i1: i0 + 1,
        frac: x - i0 as f64,
        inside,
    }
}

struct Corners<T> {
    count: usize,
    index: [usize; 8],
    weight: [T; 8],
    /// d weight / d continuous index, per axis.
    dweight: [[T; 8]; 3],
    inside: [bool; 3],
}

fn corners<T: Real>(grid: &[T], plane: usize, p: usize, dims: &[usize]) -> Corners<T> {
    let rank = dims.len();
    let mut samples = [AxisSample {
        i0: 0,
        i1: 0,
        frac: 0.0,
        inside: false,
    }; 3];
    for (a, s) in samples.iter_mut().enumerate().take(rank) {
        *s = axis_sample(grid[a * plane + p].as_f64(), dims[a]);
    }
    let mut strides = [1usize; 3];
    for a in (0..rank.saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * dims[a + 1];
    }
    let count = 1 << rank;
    let mut c = Corners {
        count,
        index: [0; 8],
        weight: [T::zero(); 8],
        dweight: [[T::zero(); 8]; 3],
        inside: [false; 3],
    };
    for (a, s) in samples.iter().enumerate().take(rank) {
        c.inside[a] = s.inside;
    }
    for m in 0..count {
        let mut idx = 0;
        let mut w = 1.0;
        let mut factors = [1.0f64; 3];
        for (a, s) in samples.iter().enumerate().take(rank) {
            let upper = (m >> (rank - 1 - a)) & 1 == 1;
            idx += if upper { s.i1 } else { s.i0 } * strides[a];
            factors[a] = if upper { s.frac } else { 1.0 - s.frac };
            w *= factors[a];
        }
        c.index[m] = idx;
        c.weight[m] = T::lit(w);
        for a in 0..rank {
            let upper = (m >> (rank - 1 - a)) & 1 == 1;
            let mut d = if upper { 1.0 } else { -1.0 };
            for (b, f) in factors.iter().enumerate().take(rank) {
                if b != a {
                    d *= f;
                }
            }
            c.dweight[a][m] = T::lit(d);
        }
    }
    c
}

/// `img` is `[B, C, dims...]`, `grid` is `[B, D, out...]` with `D = dims.len()`.
pub(crate) fn grid_sample_forward<T: Real>(
    img: &[T],
    img_shape: &[usize],
    grid: &[T],
    grid_shape: &[usize],
) -> Vec<T> {
    let (bsz, ch) = (img_shape[0], img_shape[1]);
    let dims = &img_shape[2..];
    let in_plane: usize = dims.iter().product();
    let rank = dims.len();
    let out_plane: usize = grid_shape[2..].iter().product();
    let mut out = vec![T::zero(); bsz * ch * out_plane];
    for b in 0..bsz {
        let gb = &grid[b * rank * out_plane..(b + 1) * rank * out_plane];
        let ib = &img[b * ch * in_plane..(b + 1) * ch * in_plane];
        for p in 0..out_plane {
            let c = corners(gb, out_plane, p, dims);
            for k in 0..ch {
                let plane = &ib[k * in_plane..(k + 1) * in_plane];
                let mut acc = T::zero();
                for m in 0..c.count {
                    acc += c.weight[m] * plane[c.index[m]];
                }
                out[(b * ch + k) * out_plane + p] = acc;
            }
        }
    }
    out
}

pub(crate) fn grid_sample_backward<T: Real>(
    img: &[T],
    img_shape: &[usize],
    grid: &[T],
    grid_shape: &[usize],
    grad_out: &[T],
    need_img: bool,
    need_grid: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (bsz, ch) = (img_shape[0], img_shape[1]);
    let dims = &img_shape[2..];
    let in_plane: usize = dims.iter().product();
    let rank = dims.len();
    let out_plane: usize = grid_shape[2..].iter().product();
    let mut dimg = need_img.then(|| vec![T::zero(); img.len()]);
    let mut dgrid = need_grid.then(|| vec![T::zero(); grid.len()]);
    for b in 0..bsz {
        let gb = &grid[b * rank * out_plane..(b + 1) * rank * out_plane];
        for p in 0..out_plane {
            let c = corners(gb, out_plane, p, dims);
            let mut dcoord = [T::zero(); 3];
            for k in 0..ch {
                let go = grad_out[(b * ch + k) * out_plane + p];
                let base = (b * ch + k) * in_plane;
                if let Some(dimg) = dimg.as_mut() {
                    for m in 0..c.count {
                        dimg[base + c.index[m]] += c.weight[m] * go;
                    }
                }
                if dgrid.is_some() {
                    for (a, dc) in dcoord.iter_mut().enumerate().take(rank) {
                        if c.inside[a] {
                            let mut s = T::zero();
                            for m in 0..c.count {
                                s += c.dweight[a][m] * img[base + c.index[m]];
                            }
                            *dc += s * go;
                        }
                    }
                }
            }
            if let Some(dgrid) = dgrid.as_mut() {
                for (a, &dc) in dcoord.iter().enumerate().take(rank) {
                    // d index / d normalized coordinate = n / 2
                    dgrid[(b * rank + a) * out_plane + p] += dc * T::lit(dims[a] as f64 * 0.5);
                }
            }
        }
    }
    (dimg, dgrid)
}
