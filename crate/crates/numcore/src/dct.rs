//! Orthonormal 2-D DCT (type II forward, type III inverse), computed in `f64`
//! as two dense matrix products.

/// Cached basis matrices for one `h×w` geometry.
#[derive(Debug, Clone)]
pub struct Dct2 {
    h: usize,
    w: usize,
    basis_h: Vec<f64>,
    basis_w: Vec<f64>,
}

fn basis(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    let scale0 = (1.0 / n as f64).sqrt();
    let scale = (2.0 / n as f64).sqrt();
    for k in 0..n {
        let a = if k == 0 { scale0 } else { scale };
        for i in 0..n {
            m[k * n + i] =
                a * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    m
}

#[allow(clippy::too_many_arguments)]
fn dgemm(m: usize, k: usize, n: usize, a: &[f64], trans_a: bool, b: &[f64], trans_b: bool, c: &mut [f64]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: operand lengths are asserted against (m, k, n) above.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, 0.0, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

impl Dct2 {
    pub fn new(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            basis_h: basis(h),
            basis_w: basis(w),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    /// `C_h · X · C_wᵀ` for a row-major `h×w` image.
    pub fn forward(&self, image: &[f64]) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        let mut tmp = vec![0.0; h * w];
        dgemm(h, h, w, &self.basis_h, false, image, false, &mut tmp);
        let mut out = vec![0.0; h * w];
        dgemm(h, w, w, &tmp, false, &self.basis_w, true, &mut out);
        out
    }

    /// `C_hᵀ · Y · C_w`, the exact inverse of [`Dct2::forward`].
    pub fn inverse(&self, coeffs: &[f64]) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        let mut tmp = vec![0.0; h * w];
        dgemm(h, h, w, &self.basis_h, true, coeffs, false, &mut tmp);
        let mut out = vec![0.0; h * w];
        dgemm(h, w, w, &tmp, false, &self.basis_w, false, &mut out);
        out
    }
}

pub fn dct2(image: &[f32], h: usize, w: usize) -> Vec<f64> {
    let x: Vec<f64> = image.iter().map(|&v| v as f64).collect();
    Dct2::new(h, w).forward(&x)
}

pub fn idct2(coeffs: &[f64], h: usize, w: usize) -> Vec<f32> {
    Dct2::new(h, w).inverse(coeffs).into_iter().map(|v| v as f32).collect()
}
