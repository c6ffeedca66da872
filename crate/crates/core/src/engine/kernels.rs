//! Dense kernels behind the graph ops. Everything here works on raw
//! row-major slices; shape validation happens in the graph layer.

/// `c = alpha * op(a) * op(b) + beta * c` where `op` optionally transposes.
/// `a` is stored as `[m, k]` (or `[k, m]` when `trans_a`), `b` as `[k, n]`
/// (or `[n, k]` when `trans_b`), `c` as `[m, n]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover exactly the strided extents described above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }
}

/// Unfolds one `[C, H, W]` image into a `[C*kh*kw, out_h*out_w]` column matrix.
pub(crate) fn im2col(x: &[f64], geo: &ConvGeometry, cols: &mut [f64]) {
    let (oh, ow) = (geo.out_h(), geo.out_w());
    let spatial = oh * ow;
    let pad = geo.padding as isize;
    for c in 0..geo.channels {
        let plane = &x[c * geo.height * geo.width..(c + 1) * geo.height * geo.width];
        for ki in 0..geo.kernel_h {
            for kj in 0..geo.kernel_w {
                let row = (c * geo.kernel_h + ki) * geo.kernel_w + kj;
                let dst = &mut cols[row * spatial..(row + 1) * spatial];
                for oy in 0..oh {
                    let iy = (oy * geo.stride + ki) as isize - pad;
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= geo.height as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * geo.width..(iy as usize + 1) * geo.width];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * geo.stride + kj) as isize - pad;
                        *o = if ix < 0 || ix >= geo.width as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
pub(crate) fn col2im(cols: &[f64], geo: &ConvGeometry, dx: &mut [f64]) {
    let (oh, ow) = (geo.out_h(), geo.out_w());
    let spatial = oh * ow;
    let pad = geo.padding as isize;
    for c in 0..geo.channels {
        let plane = &mut dx[c * geo.height * geo.width..(c + 1) * geo.height * geo.width];
        for ki in 0..geo.kernel_h {
            for kj in 0..geo.kernel_w {
                let row = (c * geo.kernel_h + ki) * geo.kernel_w + kj;
                let src = &cols[row * spatial..(row + 1) * spatial];
                for oy in 0..oh {
                    let iy = (oy * geo.stride + ki) as isize - pad;
                    if iy < 0 || iy >= geo.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * geo.width..(iy as usize + 1) * geo.width];
                    for ox in 0..ow {
                        let ix = (ox * geo.stride + kj) as isize - pad;
                        if ix >= 0 && ix < geo.width as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution for a batch: `x` is `[N, C, H, W]`, `w` is
/// `[O, C, kh, kw]`, output `[N, O, out_h, out_w]`.
pub(crate) fn conv2d_forward(x: &[f64], w: &[f64], batch: usize, out_ch: usize, geo: &ConvGeometry) -> Vec<f64> {
    let spatial = geo.out_h() * geo.out_w();
    let in_len = geo.channels * geo.height * geo.width;
    let patch = geo.patch_len();
    let mut cols = vec![0.0; patch * spatial];
    let mut out = vec![0.0; batch * out_ch * spatial];
    for n in 0..batch {
        im2col(&x[n * in_len..(n + 1) * in_len], geo, &mut cols);
        gemm(
            out_ch,
            patch,
            spatial,
            1.0,
            w,
            false,
            &cols,
            false,
            0.0,
            &mut out[n * out_ch * spatial..(n + 1) * out_ch * spatial],
        );
    }
    out
}

/// Gradients of a batched convolution with respect to input and weight.
/// Either output may be skipped.
pub(crate) fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    batch: usize,
    out_ch: usize,
    geo: &ConvGeometry,
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let spatial = geo.out_h() * geo.out_w();
    let in_len = geo.channels * geo.height * geo.width;
    let patch = geo.patch_len();
    let mut cols = vec![0.0; patch * spatial];
    let mut dcols = vec![0.0; patch * spatial];
    let mut dx = want_dx.then(|| vec![0.0; batch * in_len]);
    let mut dw = want_dw.then(|| vec![0.0; out_ch * patch]);
    for n in 0..batch {
        let dy_n = &dy[n * out_ch * spatial..(n + 1) * out_ch * spatial];
        if let Some(dw) = dw.as_mut() {
            im2col(&x[n * in_len..(n + 1) * in_len], geo, &mut cols);
            gemm(out_ch, spatial, patch, 1.0, dy_n, false, &cols, true, 1.0, dw);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(patch, out_ch, spatial, 1.0, w, true, dy_n, false, 0.0, &mut dcols);
            col2im(&dcols, geo, &mut dx[n * in_len..(n + 1) * in_len]);
        }
    }
    (dx, dw)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let expected = naive_matmul(&a, &b, m, k, n);

        let mut c = vec![0.0; m * n];
        gemm(m, k, n, 1.0, &a, false, &b, false, 0.0, &mut c);
        for (x, y) in c.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-12);
        }

        // a^T stored as [k, m], b^T stored as [n, k]
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut c2 = vec![0.0; m * n];
        gemm(m, k, n, 1.0, &at, true, &bt, true, 0.0, &mut c2);
        for (x, y) in c2.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        let geo = ConvGeometry {
            channels: 2,
            height: 5,
            width: 4,
            kernel_h: 3,
            kernel_w: 3,
            stride: 2,
            padding: 1,
        };
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.7).sin()).collect();
        let spatial = geo.out_h() * geo.out_w();
        let c: Vec<f64> = (0..geo.patch_len() * spatial)
            .map(|i| (i as f64 * 0.3).cos())
            .collect();
        let mut cols = vec![0.0; c.len()];
        im2col(&x, &geo, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&c, &geo, &mut back);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
