//! Two-dimensional discrete Fourier transform, deliberately naive.
//!
//! Both directions run the O(n²) summation along each axis via twiddle
//! tables indexed by (k·m) mod n. Sizes are unrestricted; there is no fast
//! path, and none is needed at the feature-map sizes this crate works with.
//!
//! Conventions: the forward transform is unnormalized,
//! `X[k,l] = Σ x[m,n]·exp(-2πi(km/R + ln/C))`, and the inverse carries the
//! full `1/(R·C)` factor, so `idft2(dft2(x)) = x` and Parseval reads
//! `Σ|x|² = Σ|X|²/(R·C)`.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// A complex-valued map with the same row-major layout as [`Matrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMap {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl ComplexMap {
    pub fn new(rows: usize, cols: usize, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if rows * cols != re.len() || re.len() != im.len() {
            return Err(Error::shape(format!(
                "{rows}x{cols} complex map needs {} entries, got re={} im={}",
                rows * cols,
                re.len(),
                im.len()
            )));
        }
        Ok(ComplexMap { rows, cols, re, im })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        ComplexMap { rows, cols, re: vec![0.0; rows * cols], im: vec![0.0; rows * cols] }
    }

    pub fn from_real(m: &Matrix) -> Self {
        ComplexMap {
            rows: m.rows(),
            cols: m.cols(),
            re: m.data().to_vec(),
            im: vec![0.0; m.data().len()],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub fn get(&self, i: usize, j: usize) -> (f64, f64) {
        let idx = i * self.cols + j;
        (self.re[idx], self.im[idx])
    }

    /// Σ(re² + im²), the spectral side of the Parseval identity.
    pub fn energy(&self) -> f64 {
        self.re.iter().map(|v| v * v).sum::<f64>() + self.im.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn max_abs_im(&self) -> f64 {
        self.im.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Drops the imaginary part after checking it is residue, not signal.
    pub fn into_real(self, tol: f64) -> Result<Matrix> {
        let residue = self.max_abs_im();
        if residue > tol {
            return Err(Error::numeric(format!(
                "imaginary residue {residue:.3e} exceeds {tol:.3e} when realizing a complex map"
            )));
        }
        Ok(Matrix::from_raw(self.rows, self.cols, self.re))
    }

    pub fn real_part(&self) -> Matrix {
        Matrix::from_raw(self.rows, self.cols, self.re.clone())
    }

    pub fn max_abs_diff(&self, other: &ComplexMap) -> f64 {
        assert!(self.rows == other.rows && self.cols == other.cols);
        let dre = self
            .re
            .iter()
            .zip(&other.re)
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
        let dim = self
            .im
            .iter()
            .zip(&other.im)
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
        dre.max(dim)
    }
}

/// Unit-circle samples for one axis: `cos[j] + i·sin[j] = exp(2πi·j/n)`.
/// Exponents are reduced mod n, so the table is exact over the whole sum.
struct Twiddle {
    n: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Twiddle {
    fn new(n: usize) -> Self {
        let step = 2.0 * std::f64::consts::PI / n as f64;
        let (cos, sin) = (0..n).map(|j| (step * j as f64).sin_cos()).map(|(s, c)| (c, s)).unzip();
        Twiddle { n, cos, sin }
    }
}

/// One naive 1-D transform: out[k] = Σ_m in[m]·exp(sign·2πi·km/n).
fn transform_line(
    re_in: &[f64],
    im_in: &[f64],
    re_out: &mut [f64],
    im_out: &mut [f64],
    tw: &Twiddle,
    sign: f64,
) {
    let n = tw.n;
    for k in 0..n {
        let mut acc_re = 0.0;
        let mut acc_im = 0.0;
        for m in 0..n {
            let j = (k * m) % n;
            let c = tw.cos[j];
            let s = sign * tw.sin[j];
            acc_re += re_in[m] * c - im_in[m] * s;
            acc_im += re_in[m] * s + im_in[m] * c;
        }
        re_out[k] = acc_re;
        im_out[k] = acc_im;
    }
}

fn transform_2d(x: &ComplexMap, sign: f64) -> ComplexMap {
    let (rows, cols) = (x.rows, x.cols);
    let mut out = x.clone();
    if rows == 0 || cols == 0 {
        return out;
    }

    let tw_cols = Twiddle::new(cols);
    let mut line_re = vec![0.0; cols];
    let mut line_im = vec![0.0; cols];
    for r in 0..rows {
        let span = r * cols..(r + 1) * cols;
        transform_line(
            &x.re[span.clone()],
            &x.im[span.clone()],
            &mut line_re,
            &mut line_im,
            &tw_cols,
            sign,
        );
        out.re[span.clone()].copy_from_slice(&line_re);
        out.im[span].copy_from_slice(&line_im);
    }

    let tw_rows = Twiddle::new(rows);
    let mut col_re = vec![0.0; rows];
    let mut col_im = vec![0.0; rows];
    let mut new_re = vec![0.0; rows];
    let mut new_im = vec![0.0; rows];
    for c in 0..cols {
        for r in 0..rows {
            col_re[r] = out.re[r * cols + c];
            col_im[r] = out.im[r * cols + c];
        }
        transform_line(&col_re, &col_im, &mut new_re, &mut new_im, &tw_rows, sign);
        for r in 0..rows {
            out.re[r * cols + c] = new_re[r];
            out.im[r * cols + c] = new_im[r];
        }
    }
    out
}

/// Forward 2-D DFT of a real map.
pub fn dft2(x: &Matrix) -> ComplexMap {
    transform_2d(&ComplexMap::from_real(x), -1.0)
}

/// Forward 2-D DFT of a complex map.
pub fn dft2_complex(x: &ComplexMap) -> ComplexMap {
    transform_2d(x, -1.0)
}

/// Full complex inverse, including the 1/(rows·cols) normalization.
pub fn idft2_complex(x: &ComplexMap) -> ComplexMap {
    let mut out = transform_2d(x, 1.0);
    if out.re.is_empty() {
        return out;
    }
    let scale = 1.0 / (out.rows * out.cols) as f64;
    for v in out.re.iter_mut().chain(out.im.iter_mut()) {
        *v *= scale;
    }
    out
}

/// Inverse transform returning the real part. Spectra of real signals that
/// passed through negation-symmetric masks have only rounding-level
/// imaginary residue; callers needing the residue checked use
/// [`idft2_complex`] with [`ComplexMap::into_real`].
pub fn idft2(x: &ComplexMap) -> Matrix {
    idft2_complex(x).real_part()
}
