//! im2col convolution kernels shared by the tape's forward and backward rules.

use super::tensor::Real;

/// Geometry of a square-kernel, symmetric-padding 2-d convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }
}

/// Padding that keeps `out = ceil(in / stride)` for odd kernels.
pub fn same_padding(kernel: usize) -> usize {
    (kernel - 1) / 2
}

fn im2col<T: Real>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let k = g.kernel;
    let mut row = 0;
    for c in 0..g.in_channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.height as isize {
                        out_row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im<T: Real>(g: &ConvGeom, col: &[T], dx: &mut [T]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let k = g.kernel;
    let mut row = 0;
    for c in 0..g.in_channels {
        let plane = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let src = &col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let base = iy as usize * g.width;
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            plane[base + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

pub fn forward<T: Real>(g: &ConvGeom, x: &[T], weight: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_per = g.in_channels * g.height * g.width;
    let out_per = g.out_channels * cols;
    let mut out = vec![T::zero(); g.batch * out_per];
    let mut col = vec![T::zero(); rows * cols];
    for n in 0..g.batch {
        im2col(g, &x[n * in_per..(n + 1) * in_per], &mut col);
        let dst = &mut out[n * out_per..(n + 1) * out_per];
        if let Some(b) = bias {
            for (o, chunk) in dst.chunks_mut(cols).enumerate() {
                chunk.iter_mut().for_each(|v| *v = b[o]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(
            g.out_channels,
            rows,
            cols,
            T::one(),
            weight,
            (rows as isize, 1),
            &col,
            (cols as isize, 1),
            beta,
            dst,
            (cols as isize, 1),
        );
    }
    out
}

/// Gradients of a convolution given the output gradient. Each returned
/// buffer is `None` when the caller did not ask for it.
pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub fn backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_per = g.in_channels * g.height * g.width;
    let out_per = g.out_channels * cols;
    let mut dx = need.0.then(|| vec![T::zero(); g.batch * in_per]);
    let mut dw = need.1.then(|| vec![T::zero(); weight.len()]);
    let mut db = need.2.then(|| vec![T::zero(); g.out_channels]);
    let mut col = vec![T::zero(); rows * cols];
    for n in 0..g.batch {
        let go = &grad_out[n * out_per..(n + 1) * out_per];
        if let Some(db) = db.as_mut() {
            for (o, chunk) in go.chunks(cols).enumerate() {
                db[o] += chunk.iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            im2col(g, &x[n * in_per..(n + 1) * in_per], &mut col);
            // dW(o x rows) += dY(o x cols) * col^T(cols x rows)
            T::gemm(
                g.out_channels,
                cols,
                rows,
                T::one(),
                go,
                (cols as isize, 1),
                &col,
                (1, cols as isize),
                T::one(),
                dw,
                (rows as isize, 1),
            );
        }
        if let Some(dx) = dx.as_mut() {
            // dcol(rows x cols) = W^T(rows x o) * dY(o x cols)
            T::gemm(
                rows,
                g.out_channels,
                cols,
                T::one(),
                weight,
                (1, rows as isize),
                go,
                (cols as isize, 1),
                T::zero(),
                &mut col,
                (cols as isize, 1),
            );
            col2im(g, &col, &mut dx[n * in_per..(n + 1) * in_per]);
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}
