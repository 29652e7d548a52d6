//! Raw numeric kernels shared by forward and backward passes.

/// Geometry of a square-kernel 2-D convolution over an NCHW batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    /// Rows of the unfolded patch matrix (`C * k * k`).
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    /// Output positions per sample.
    pub fn positions(&self) -> usize {
        self.out_height * self.out_width
    }

    /// Columns of the unfolded patch matrix (`N * Ho * Wo`).
    pub fn columns(&self) -> usize {
        self.batch * self.positions()
    }
}

/// `c = a · b` (or `c += a · b` with `accumulate`), where `a` is `m×k` and
/// `b` is `k×n`, each optionally stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_transposed { (1, k) } else { (n, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds every receptive field into a column of a `patch_len × columns`
/// matrix. Column index is `n * positions + oy * Wo + ox`.
pub(crate) fn im2col(input: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let cols = g.columns();
    let positions = g.positions();
    let mut out = vec![0.0; g.patch_len() * cols];
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let row_base = row * cols;
                for n in 0..g.batch {
                    let plane = &input[(n * g.channels + c) * g.height * g.width..][..g.height * g.width];
                    let col_base = row_base + n * positions;
                    for oy in 0..g.out_height {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        let src_row = &plane[iy as usize * g.width..][..g.width];
                        let dst = &mut out[col_base + oy * g.out_width..][..g.out_width];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.width as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters patch columns back onto the input grid,
/// summing overlaps.
pub(crate) fn col2im(cols: &[f64], g: &ConvGeometry, out: &mut [f64]) {
    let ncols = g.columns();
    let positions = g.positions();
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let row_base = row * ncols;
                for n in 0..g.batch {
                    let plane_base = (n * g.channels + c) * g.height * g.width;
                    let col_base = row_base + n * positions;
                    for oy in 0..g.out_height {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        let src = &cols[col_base + oy * g.out_width..][..g.out_width];
                        for (ox, s) in src.iter().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.width as isize {
                                out[plane_base + iy as usize * g.width + ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `[N, O, P]` from an `O × (N·P)` matrix.
pub(crate) fn channel_major_to_batch_major(mat: &[f64], batch: usize, channels: usize, positions: usize) -> Vec<f64> {
    let mut out = vec![0.0; mat.len()];
    for o in 0..channels {
        for n in 0..batch {
            let src = &mat[o * batch * positions + n * positions..][..positions];
            out[(n * channels + o) * positions..][..positions].copy_from_slice(src);
        }
    }
    out
}

/// Inverse of [`channel_major_to_batch_major`].
pub(crate) fn batch_major_to_channel_major(t: &[f64], batch: usize, channels: usize, positions: usize) -> Vec<f64> {
    let mut out = vec![0.0; t.len()];
    for n in 0..batch {
        for o in 0..channels {
            let src = &t[(n * channels + o) * positions..][..positions];
            out[o * batch * positions + n * positions..][..positions].copy_from_slice(src);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_handles_transposes() {
        // a = [[1,2,3],[4,5,6]], b = [[1,0],[0,1],[1,1]]
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = [0.0; 4];
        gemm(2, 3, 2, &a, false, &b, false, &mut c, false);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);

        // aᵀ stored as 3×2
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let bt = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let mut c2 = [1.0; 4];
        gemm(2, 3, 2, &at, true, &bt, true, &mut c2, true);
        assert_eq!(c2, [5.0, 6.0, 11.0, 12.0]);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeometry {
            batch: 2,
            channels: 2,
            height: 5,
            width: 4,
            kernel: 3,
            stride: 2,
            pad: 1,
            out_height: 3,
            out_width: 2,
        };
        let x: Vec<f64> = (0..2 * 2 * 5 * 4).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..g.patch_len() * g.columns()).map(|i| (i as f64 * 0.11).cos()).collect();
        let ax = im2col(&x, &g);
        let mut aty = vec![0.0; x.len()];
        col2im(&y, &g, &mut aty);
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
