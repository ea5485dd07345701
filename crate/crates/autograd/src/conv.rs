//! Cross-correlation over 2 or 3 spatial axes via im2col + GEMM.
//!
//! Two-dimensional inputs are handled as three-dimensional ones with a unit
//! depth axis, zero depth padding and a unit depth kernel.

use crate::error::{invalid, mismatch, AutogradError, Result};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub output: [usize; 3],
    pub spatial_rank: usize,
}

impl ConvGeom {
    pub fn new(x_shape: &[usize], w_shape: &[usize], stride: usize, padding: usize) -> Result<Self> {
        const OP: &str = "conv";
        let rank = x_shape.len().saturating_sub(2);
        if rank != 2 && rank != 3 {
            return Err(AutogradError::UnsupportedRank { op: OP, rank });
        }
        if w_shape.len() != x_shape.len() {
            return Err(mismatch(OP, format!("input {x_shape:?} vs weight {w_shape:?}")));
        }
        if stride == 0 {
            return Err(invalid(OP, "stride must be at least 1"));
        }
        if w_shape[1] != x_shape[1] {
            return Err(mismatch(
                OP,
                format!("input has {} channels, weight expects {}", x_shape[1], w_shape[1]),
            ));
        }
        let lift = |s: &[usize]| -> [usize; 3] {
            if rank == 2 {
                [1, s[0], s[1]]
            } else {
                [s[0], s[1], s[2]]
            }
        };
        let input = lift(&x_shape[2..]);
        let kernel = lift(&w_shape[2..]);
        let (stride3, pad3) = if rank == 2 {
            ([1, stride, stride], [0, padding, padding])
        } else {
            ([stride; 3], [padding; 3])
        };
        let mut output = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * pad3[a];
            if kernel[a] == 0 || kernel[a] > padded {
                return Err(mismatch(
                    OP,
                    format!("kernel {w_shape:?} does not fit padded input {x_shape:?}"),
                ));
            }
            output[a] = (padded - kernel[a]) / stride3[a] + 1;
        }
        Ok(ConvGeom {
            batch: x_shape[0],
            cin: x_shape[1],
            cout: w_shape[0],
            input,
            kernel,
            stride: stride3,
            pad: pad3,
            output,
            spatial_rank: rank,
        })
    }

    pub fn output_shape(&self) -> Vec<usize> {
        let mut s = vec![self.batch, self.cout];
        if self.spatial_rank == 3 {
            s.push(self.output[0]);
        }
        s.extend_from_slice(&self.output[1..]);
        s
    }

    fn in_plane(&self) -> usize {
        self.input.iter().product()
    }

    fn out_plane(&self) -> usize {
        self.output.iter().product()
    }

    fn patch(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }

    /// Source index along axis `a` for output position `o` and kernel tap `k`.
    #[inline]
    fn source(&self, a: usize, o: usize, k: usize) -> Option<usize> {
        let i = (o * self.stride[a] + k) as isize - self.pad[a] as isize;
        (i >= 0 && (i as usize) < self.input[a]).then_some(i as usize)
    }

    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let [id, ih, iw] = self.input;
        let [kd, kh, kw] = self.kernel;
        let [od, oh, ow] = self.output;
        let l = self.out_plane();
        let mut row = 0;
        for ci in 0..self.cin {
            let xc = &x[ci * id * ih * iw..(ci + 1) * id * ih * iw];
            for kz in 0..kd {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let dst = &mut cols[row * l..(row + 1) * l];
                        let mut col = 0;
                        for oz in 0..od {
                            let sz = self.source(0, oz, kz);
                            for oy in 0..oh {
                                let sy = self.source(1, oy, ky);
                                for ox in 0..ow {
                                    dst[col] = match (sz, sy, self.source(2, ox, kx)) {
                                        (Some(z), Some(y), Some(xx)) => xc[(z * ih + y) * iw + xx],
                                        _ => T::zero(),
                                    };
                                    col += 1;
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let [id, ih, iw] = self.input;
        let [kd, kh, kw] = self.kernel;
        let [od, oh, ow] = self.output;
        let l = self.out_plane();
        let mut row = 0;
        for ci in 0..self.cin {
            let dxc = &mut dx[ci * id * ih * iw..(ci + 1) * id * ih * iw];
            for kz in 0..kd {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let src = &cols[row * l..(row + 1) * l];
                        let mut col = 0;
                        for oz in 0..od {
                            let sz = self.source(0, oz, kz);
                            for oy in 0..oh {
                                let sy = self.source(1, oy, ky);
                                for ox in 0..ow {
                                    if let (Some(z), Some(y), Some(xx)) =
                                        (sz, sy, self.source(2, ox, kx))
                                    {
                                        dxc[(z * ih + y) * iw + xx] += src[col];
                                    }
                                    col += 1;
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (k, l) = (g.patch(), g.out_plane());
    let mut out = vec![T::zero(); g.batch * g.cout * l];
    let mut cols = vec![T::zero(); k * l];
    for b in 0..g.batch {
        g.im2col(&x[b * g.cin * g.in_plane()..(b + 1) * g.cin * g.in_plane()], &mut cols);
        let ob = &mut out[b * g.cout * l..(b + 1) * g.cout * l];
        if let Some(bias) = bias {
            for (co, chunk) in ob.chunks_mut(l).enumerate() {
                chunk.fill(bias[co]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(
            g.cout,
            k,
            l,
            T::one(),
            w,
            (k as isize, 1),
            &cols,
            (l as isize, 1),
            beta,
            ob,
            (l as isize, 1),
        );
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    grad_out: &[T],
    need: [bool; 3],
) -> ConvGrads<T> {
    let (k, l) = (g.patch(), g.out_plane());
    let in_len = g.cin * g.in_plane();
    let mut dx = need[0].then(|| vec![T::zero(); x.len()]);
    let mut dw = need[1].then(|| vec![T::zero(); w.len()]);
    let db = need[2].then(|| {
        let mut db = vec![T::zero(); g.cout];
        for b in 0..g.batch {
            for (co, acc) in db.iter_mut().enumerate() {
                let base = (b * g.cout + co) * l;
                *acc += grad_out[base..base + l].iter().copied().sum::<T>();
            }
        }
        db
    });
    let mut cols = vec![T::zero(); k * l];
    let mut dcols = vec![T::zero(); if need[0] { k * l } else { 0 }];
    for b in 0..g.batch {
        let gb = &grad_out[b * g.cout * l..(b + 1) * g.cout * l];
        if let Some(dw) = dw.as_mut() {
            g.im2col(&x[b * in_len..(b + 1) * in_len], &mut cols);
            // dW += dY * cols^T
            T::gemm(
                g.cout,
                l,
                k,
                T::one(),
                gb,
                (l as isize, 1),
                &cols,
                (1, l as isize),
                T::one(),
                dw,
                (k as isize, 1),
            );
        }
        if let Some(dx) = dx.as_mut() {
            // dcols = W^T * dY
            T::gemm(
                k,
                g.cout,
                l,
                T::one(),
                w,
                (1, k as isize),
                gb,
                (l as isize, 1),
                T::zero(),
                &mut dcols,
                (l as isize, 1),
            );
            g.col2im(&dcols, &mut dx[b * in_len..(b + 1) * in_len]);
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}
