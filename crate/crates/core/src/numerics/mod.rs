//! Matrix, spectral, and factorization kernels everything else composes.
//!
//! Everything is fp64 with deterministic accumulation order; given equal
//! inputs, every function here returns bitwise-equal outputs across runs.

mod fourier;
pub mod io;
mod mask;
mod matrix;
mod svd;

pub use fourier::{dft2, dft2_complex, idft2, idft2_complex, ComplexMap};
pub use io::{load_matrix, read_matrix, read_matrix_sequence, save_matrix, write_matrix};
pub use mask::{apply_mask, make_highpass, radial_frequency, FrequencyMask};
pub use matrix::{add_row_broadcast, matmul, matmul_nt, matmul_tn, row_softmax, Matrix};
pub use svd::{svd, SvdFactors};

/// High-pass filter in one call: idft2(mask ⊙ dft2(x)).
///
/// Two exactness shortcuts, both mathematically no-ops: an all-pass mask
/// skips the transform entirely, and a DC-killing mask removes the input
/// mean before transforming (only the DC bin changes, and the mask zeroes
/// it anyway). The second shortcut makes filtering an exactly-constant map
/// return exact zeros instead of rounding residue, which downstream
/// neutral-at-initialization guarantees rely on.
pub fn filter_map(x: &Matrix, mask: &FrequencyMask) -> crate::error::Result<Matrix> {
    if mask.is_all_pass() {
        if x.rows() != mask.rows() || x.cols() != mask.cols() {
            return Err(crate::error::Error::shape(format!(
                "filter_map: map {}x{} vs mask {}x{}",
                x.rows(),
                x.cols(),
                mask.rows(),
                mask.cols()
            )));
        }
        return Ok(x.clone());
    }
    let centered;
    let input = if mask.kills_dc() {
        let mean = x.data().iter().sum::<f64>() / x.data().len().max(1) as f64;
        centered = x.map(|v| v - mean);
        &centered
    } else {
        x
    };
    let back = idft2_complex(&apply_mask(&dft2(input), mask)?);
    let residue = back.max_abs_im();
    let tol = 1e-9 * x.max_abs().max(1.0);
    if residue > tol {
        return Err(crate::error::Error::numeric(format!(
            "filtered map kept imaginary residue {residue:.3e}; mask symmetry is broken"
        )));
    }
    Ok(back.real_part())
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_map(m: &Matrix) -> Matrix {
    m.map(sigmoid)
}

/// Applies [`filter_map`] to each column of `x` interpreted as an h×w map
/// in row-major order (token r sits at grid position (r / w, r % w)).
/// The row count must equal h·w exactly; no silent reshaping.
pub fn filter_columns(
    x: &Matrix,
    mask: &FrequencyMask,
    h: usize,
    w: usize,
) -> crate::error::Result<Matrix> {
    if x.rows() != h * w {
        return Err(crate::error::Error::shape(format!(
            "filter_columns: {} rows cannot form an {h}x{w} grid",
            x.rows()
        )));
    }
    if mask.rows() != h || mask.cols() != w {
        return Err(crate::error::Error::shape(format!(
            "filter_columns: mask {}x{} vs grid {h}x{w}",
            mask.rows(),
            mask.cols()
        )));
    }
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for c in 0..x.cols() {
        let map = Matrix::from_fn(h, w, |i, j| x.get(i * w + j, c));
        let filtered = filter_map(&map, mask)?;
        for i in 0..h {
            for j in 0..w {
                out.set(i * w + j, c, filtered.get(i, j));
            }
        }
    }
    Ok(out)
}
