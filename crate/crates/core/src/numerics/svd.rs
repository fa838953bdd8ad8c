//! Full singular value decomposition via one-sided Jacobi.
//!
//! Columns of a working copy are rotated pairwise until mutually orthogonal;
//! their norms are the singular values and the accumulated rotations form V.
//! One-sided Jacobi is slow on paper but unconditionally stable, and at the
//! matrix sizes used here (attention score maps, tens of rows) it converges
//! in a handful of sweeps. The returned factors are always full:
//! `u` is m×m and `vt` is n×n, with `sigma` holding min(m, n) values in
//! descending order. Trailing singular values of exactly-singular inputs
//! come out as exact zeros, with the matching u columns filled in by basis
//! completion so `u` stays orthogonal.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Relative column-orthogonality target; pairs with |⟨p,q⟩| below
/// CONVERGENCE_TOL·‖p‖‖q‖ are considered orthogonal.
const CONVERGENCE_TOL: f64 = 1e-15;
/// Full sweeps over all column pairs before giving up.
const MAX_SWEEPS: usize = 64;
/// Singular values below RANK_TOL·σ_max get their u column rebuilt by basis
/// completion instead of normalizing rounding noise.
const RANK_TOL: f64 = 1e-13;

#[derive(Debug, Clone)]
pub struct SvdFactors {
    /// Left singular vectors, m×m.
    pub u: Matrix,
    /// min(m, n) singular values, descending.
    pub sigma: Vec<f64>,
    /// Right singular vectors transposed, n×n.
    pub vt: Matrix,
}

impl SvdFactors {
    /// U·Σ·Vᵀ with the rectangular Σ implied by the factor shapes.
    pub fn reconstruct(&self) -> Matrix {
        let m = self.u.rows();
        let n = self.vt.rows();
        let t = self.sigma.len();
        let mut out = Matrix::zeros(m, n);
        for (r, sigma) in self.sigma.iter().enumerate().take(t) {
            if *sigma == 0.0 {
                continue;
            }
            for i in 0..m {
                let us = self.u.get(i, r) * sigma;
                for j in 0..n {
                    out.set(i, j, out.get(i, j) + us * self.vt.get(r, j));
                }
            }
        }
        out
    }
}

/// Decomposes `a` into full singular factors. Fails with a convergence error
/// carrying the sweep count if the Jacobi iteration stalls.
pub fn svd(a: &Matrix) -> Result<SvdFactors> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::shape("svd needs rows, cols >= 1".to_string()));
    }
    if a.rows() < a.cols() {
        // A = UΣVᵀ ⇔ Aᵀ = VΣᵀUᵀ: decompose the transpose and swap sides.
        let f = svd(&a.transpose())?;
        return Ok(SvdFactors { u: f.vt.transpose(), sigma: f.sigma, vt: f.u.transpose() });
    }

    let m = a.rows();
    let n = a.cols();
    let mut b = a.clone();
    let mut v = Matrix::identity(n);

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut worst = 0.0_f64;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..m {
                    let bp = b.get(i, p);
                    let bq = b.get(i, q);
                    alpha += bp * bp;
                    beta += bq * bq;
                    gamma += bp * bq;
                }
                if gamma == 0.0 || alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let rel = gamma.abs() / (alpha * beta).sqrt();
                worst = worst.max(rel);
                if rel <= CONVERGENCE_TOL {
                    continue;
                }
                // Classic Jacobi rotation zeroing ⟨p,q⟩.
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let bp = b.get(i, p);
                    let bq = b.get(i, q);
                    b.set(i, p, c * bp - s * bq);
                    b.set(i, q, s * bp + c * bq);
                }
                for i in 0..n {
                    let vp = v.get(i, p);
                    let vq = v.get(i, q);
                    v.set(i, p, c * vp - s * vq);
                    v.set(i, q, s * vp + c * vq);
                }
            }
        }
        if worst <= CONVERGENCE_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence { what: "one-sided Jacobi SVD", iterations: MAX_SWEEPS });
    }

    // Column norms are the singular values; sort them descending with a
    // stable permutation shared by B and V.
    let mut norms: Vec<f64> = (0..n)
        .map(|j| (0..m).map(|i| b.get(i, j).powi(2)).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap().then(x.cmp(&y)));
    let b_sorted = permute_cols(&b, &order);
    let v_sorted = permute_cols(&v, &order);
    norms = order.iter().map(|&j| norms[j]).collect();

    let sigma_max = norms.first().copied().unwrap_or(0.0);
    let mut u = Matrix::zeros(m, m);
    let mut filled = vec![false; m];
    for (j, &norm) in norms.iter().enumerate() {
        if norm > sigma_max * RANK_TOL && norm > 0.0 {
            for i in 0..m {
                u.set(i, j, b_sorted.get(i, j) / norm);
            }
            filled[j] = true;
        }
    }
    complete_basis(&mut u, &mut filled);

    Ok(SvdFactors { u, sigma: norms, vt: v_sorted.transpose() })
}

fn permute_cols(a: &Matrix, order: &[usize]) -> Matrix {
    Matrix::from_fn(a.rows(), order.len(), |i, j| a.get(i, order[j]))
}

/// Fills the unfilled columns of `u` with an orthonormal completion.
/// Each slot takes the standard basis vector with the largest component
/// orthogonal to everything accepted so far; with k orthonormal columns in
/// place, some candidate always has residual norm ≥ √((m-k)/m) > 0.
fn complete_basis(u: &mut Matrix, filled: &mut [bool]) {
    let m = u.rows();
    let mut used = vec![false; m];
    for slot in 0..m {
        if filled[slot] {
            continue;
        }
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for cand in 0..m {
            if used[cand] {
                continue;
            }
            let mut vec: Vec<f64> = vec![0.0; m];
            vec[cand] = 1.0;
            orthogonalize(u, filled, &mut vec);
            let norm = vec.iter().map(|v| v * v).sum::<f64>().sqrt();
            if best.as_ref().map_or(true, |(_, bn, _)| norm > *bn) {
                best = Some((cand, norm, vec));
            }
        }
        let (cand, norm, mut vec) = best.expect("basis completion ran out of candidates");
        debug_assert!(norm > 0.0, "degenerate basis completion");
        // Second orthogonalization pass scrubs rounding from the first.
        orthogonalize(u, filled, &mut vec);
        let norm = vec.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (i, val) in vec.iter().enumerate() {
            u.set(i, slot, val / norm);
        }
        filled[slot] = true;
        used[cand] = true;
    }
}

fn orthogonalize(u: &Matrix, filled: &[bool], vec: &mut [f64]) {
    let m = u.rows();
    for col in 0..m {
        if !filled[col] {
            continue;
        }
        let dot: f64 = (0..m).map(|i| vec[i] * u.get(i, col)).sum();
        for (i, entry) in vec.iter_mut().enumerate() {
            *entry -= dot * u.get(i, col);
        }
    }
}
