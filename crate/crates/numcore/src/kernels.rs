//! Raw slice kernels behind the tape ops: im2col/col2im, GEMM, and the
//! convolution forward and adjoint passes.

/// Output extent of a strided convolution along one axis, or `None` when the
/// kernel does not fit inside the padded input.
pub fn conv2d_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || input + 2 * pad < kernel {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

/// Output extent of a transposed convolution along one axis.
pub fn conv_transpose2d_out_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Option<usize> {
    if stride == 0 || kernel == 0 || input == 0 {
        return None;
    }
    let full = (input - 1) * stride + kernel;
    (full > 2 * pad).then(|| full - 2 * pad)
}

/// Geometry of a convolution reading a `c×h×w` image into an `oh×ow` grid.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Range of output columns `ox` whose input column `ox*stride + kj - pad`
    /// lands inside `[0, w)`.
    fn valid_range(&self, kj: usize, extent: usize, out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = kj as isize - self.pad as isize;
        // smallest ox with ox*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest ox with ox*s + off <= extent-1
        let hi_num = extent as isize - 1 - off;
        let hi = if hi_num < 0 { -1 } else { hi_num / s };
        let lo = lo.max(0) as usize;
        let hi = (hi + 1).clamp(0, out as isize) as usize;
        (lo.min(hi), hi)
    }
}

pub(crate) fn im2col(g: &ConvGeom, src: &[f32], cols: &mut [f32]) {
    let n_out = g.col_cols();
    debug_assert_eq!(src.len(), g.c * g.h * g.w);
    debug_assert_eq!(cols.len(), g.col_rows() * n_out);
    for c in 0..g.c {
        let plane = &src[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (oy_lo, oy_hi) = g.valid_range(ki, g.h, g.oh);
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * n_out..(row + 1) * n_out];
                let (ox_lo, ox_hi) = g.valid_range(kj, g.w, g.ow);
                for oy in 0..g.oh {
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if oy < oy_lo || oy >= oy_hi {
                        line.fill(0.0);
                        continue;
                    }
                    let iy = oy * g.stride + ki - g.pad;
                    let src_row = &plane[iy * g.w..(iy + 1) * g.w];
                    line[..ox_lo].fill(0.0);
                    line[ox_hi..].fill(0.0);
                    if g.stride == 1 {
                        let ix0 = ox_lo + kj - g.pad;
                        line[ox_lo..ox_hi].copy_from_slice(&src_row[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            line[ox] = src_row[ox * g.stride + kj - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters (accumulates) columns back into `dst`.
pub(crate) fn col2im(g: &ConvGeom, cols: &[f32], dst: &mut [f32]) {
    let n_out = g.col_cols();
    debug_assert_eq!(dst.len(), g.c * g.h * g.w);
    for c in 0..g.c {
        let plane = &mut dst[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (oy_lo, oy_hi) = g.valid_range(ki, g.h, g.oh);
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * n_out..(row + 1) * n_out];
                let (ox_lo, ox_hi) = g.valid_range(kj, g.w, g.ow);
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ki - g.pad;
                    let line = &src[oy * g.ow..(oy + 1) * g.ow];
                    let dst_row = &mut plane[iy * g.w..(iy + 1) * g.w];
                    for ox in ox_lo..ox_hi {
                        dst_row[ox * g.stride + kj - g.pad] += line[ox];
                    }
                }
            }
        }
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` for row-major operands, where
/// `op(a)` is `m×k` and `op(b)` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    trans_a: bool,
    b: &[f32],
    trans_b: bool,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the debug assertions above pin every operand length to the
    // extents implied by (m, k, n) and the strides computed from them.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
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

/// `y[n] = W · im2col(x[n])` for every batch element.
pub(crate) fn conv2d_forward(
    g: &ConvGeom,
    batch: usize,
    filters: usize,
    x: &[f32],
    w: &[f32],
    y: &mut [f32],
) {
    let in_len = g.c * g.h * g.w;
    let out_len = filters * g.col_cols();
    let mut cols = vec![0.0; g.col_rows() * g.col_cols()];
    for n in 0..batch {
        im2col(g, &x[n * in_len..(n + 1) * in_len], &mut cols);
        gemm(
            filters,
            g.col_rows(),
            g.col_cols(),
            w,
            false,
            &cols,
            false,
            0.0,
            &mut y[n * out_len..(n + 1) * out_len],
        );
    }
}

/// Accumulates input and kernel gradients of [`conv2d_forward`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    batch: usize,
    filters: usize,
    x: &[f32],
    w: &[f32],
    dy: &[f32],
    dx: Option<&mut [f32]>,
    dw: Option<&mut [f32]>,
) {
    let in_len = g.c * g.h * g.w;
    let out_len = filters * g.col_cols();
    let mut cols = vec![0.0; g.col_rows() * g.col_cols()];
    if let Some(dw) = dw {
        for n in 0..batch {
            im2col(g, &x[n * in_len..(n + 1) * in_len], &mut cols);
            gemm(
                filters,
                g.col_cols(),
                g.col_rows(),
                &dy[n * out_len..(n + 1) * out_len],
                false,
                &cols,
                true,
                1.0,
                dw,
            );
        }
    }
    if let Some(dx) = dx {
        for n in 0..batch {
            gemm(
                g.col_rows(),
                filters,
                g.col_cols(),
                w,
                true,
                &dy[n * out_len..(n + 1) * out_len],
                false,
                0.0,
                &mut cols,
            );
            col2im(g, &cols, &mut dx[n * in_len..(n + 1) * in_len]);
        }
    }
}

/// Transposed convolution. `g` describes the *adjoint* convolution, i.e. the
/// one reading the output image (`g.c×g.h×g.w`) into the input grid
/// (`g.oh×g.ow`); `in_ch` is the number of input channels.
pub(crate) fn conv_t2d_forward(
    g: &ConvGeom,
    batch: usize,
    in_ch: usize,
    x: &[f32],
    w: &[f32],
    y: &mut [f32],
) {
    let in_len = in_ch * g.col_cols();
    let out_len = g.c * g.h * g.w;
    let mut cols = vec![0.0; g.col_rows() * g.col_cols()];
    for n in 0..batch {
        gemm(
            g.col_rows(),
            in_ch,
            g.col_cols(),
            w,
            true,
            &x[n * in_len..(n + 1) * in_len],
            false,
            0.0,
            &mut cols,
        );
        let out = &mut y[n * out_len..(n + 1) * out_len];
        out.fill(0.0);
        col2im(g, &cols, out);
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_t2d_backward(
    g: &ConvGeom,
    batch: usize,
    in_ch: usize,
    x: &[f32],
    w: &[f32],
    dy: &[f32],
    mut dx: Option<&mut [f32]>,
    mut dw: Option<&mut [f32]>,
) {
    let in_len = in_ch * g.col_cols();
    let out_len = g.c * g.h * g.w;
    let mut cols = vec![0.0; g.col_rows() * g.col_cols()];
    for n in 0..batch {
        im2col(g, &dy[n * out_len..(n + 1) * out_len], &mut cols);
        if let Some(dx) = dx.as_deref_mut() {
            gemm(
                in_ch,
                g.col_rows(),
                g.col_cols(),
                w,
                false,
                &cols,
                false,
                1.0,
                &mut dx[n * in_len..(n + 1) * in_len],
            );
        }
        if let Some(dw) = dw.as_deref_mut() {
            gemm(
                in_ch,
                g.col_cols(),
                g.col_rows(),
                &x[n * in_len..(n + 1) * in_len],
                false,
                &cols,
                true,
                1.0,
                dw,
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(g: &ConvGeom, filters: usize, x: &[f32], w: &[f32]) -> Vec<f32> {
        let mut y = vec![0.0; filters * g.oh * g.ow];
        for f in 0..filters {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = 0.0f64;
                    for c in 0..g.c {
                        for ki in 0..g.kh {
                            for kj in 0..g.kw {
                                let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                let xv = x[(c * g.h + iy as usize) * g.w + ix as usize];
                                let wv = w[((f * g.c + c) * g.kh + ki) * g.kw + kj];
                                acc += (xv * wv) as f64;
                            }
                        }
                    }
                    y[(f * g.oh + oy) * g.ow + ox] = acc as f32;
                }
            }
        }
        y
    }

    #[test]
    fn gemm_matches_naive_product_with_transposes() {
        let a: Vec<f32> = (0..6).map(|v| v as f32).collect(); // 2x3
        let b: Vec<f32> = (0..12).map(|v| (v as f32) * 0.5).collect(); // 3x4
        let mut c = vec![0.0; 8];
        gemm(2, 3, 4, &a, false, &b, false, 0.0, &mut c);
        for i in 0..2 {
            for j in 0..4 {
                let expect: f32 = (0..3).map(|l| a[i * 3 + l] * b[l * 4 + j]).sum();
                assert_eq!(c[i * 4 + j], expect);
            }
        }
        // a^T stored as 3x2, b^T stored as 4x3
        let at: Vec<f32> = (0..6).map(|idx| a[(idx % 2) * 3 + idx / 2]).collect();
        let bt: Vec<f32> = (0..12).map(|idx| b[(idx % 3) * 4 + idx / 3]).collect();
        let mut c2 = vec![0.0; 8];
        gemm(2, 3, 4, &at, true, &bt, true, 0.0, &mut c2);
        assert_eq!(c, c2);
    }

    #[test]
    fn im2col_conv_matches_naive_for_all_strides_and_pads() {
        for &(stride, pad, k) in &[(1, 0, 3), (1, 1, 3), (2, 1, 4), (2, 2, 3), (1, 2, 1), (2, 0, 4)] {
            let (c, h, w, f) = (2, 7, 6, 3);
            let oh = conv2d_out_extent(h, k, stride, pad).unwrap();
            let ow = conv2d_out_extent(w, k, stride, pad).unwrap();
            let g = ConvGeom { c, h, w, kh: k, kw: k, stride, pad, oh, ow };
            let x: Vec<f32> = (0..c * h * w).map(|i| ((i * 37 % 11) as f32) - 5.0).collect();
            let wt: Vec<f32> = (0..f * c * k * k).map(|i| ((i * 13 % 7) as f32) * 0.25 - 0.7).collect();
            let mut y = vec![0.0; f * oh * ow];
            conv2d_forward(&g, 1, f, &x, &wt, &mut y);
            let expect = naive_conv(&g, f, &x, &wt);
            for (a, b) in y.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-4, "stride {stride} pad {pad} k {k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom { c: 2, h: 5, w: 6, kh: 3, kw: 3, stride: 2, pad: 1, oh: 3, ow: 3 };
        let x: Vec<f32> = (0..60).map(|i| (i as f32 * 0.37).sin()).collect();
        let z: Vec<f32> = (0..g.col_rows() * g.col_cols()).map(|i| (i as f32 * 0.11).cos()).collect();
        let mut cols = vec![0.0; z.len()];
        im2col(&g, &x, &mut cols);
        let lhs: f64 = cols.iter().zip(&z).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        let mut back = vec![0.0; 60];
        col2im(&g, &z, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        assert!((lhs - rhs).abs() < 1e-4);
    }
}
