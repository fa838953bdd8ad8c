//! Independent reference implementations for cross-checking cauvis-core.
//!
//! Everything here is written from the textbook definition with no code
//! shared with the main crate: matrices are plain `Vec<Vec<f64>>`, the DFT
//! is the quadruple-loop double sum, eigenvalues come from shifted QR, and
//! interventional distributions are estimated by forward simulation. Slow
//! on purpose; these run only in tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Triple-loop matrix product on nested vecs.
pub fn matmul_naive(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = a.len();
    let k = if m > 0 { a[0].len() } else { 0 };
    let n = if b.is_empty() { 0 } else { b[0].len() };
    assert_eq!(k, b.len(), "inner dimensions differ");
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for t in 0..k {
                acc += a[i][t] * b[t][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

/// Forward 2-D DFT straight from the definition:
/// X[k][l] = Σ_m Σ_n x[m][n]·exp(-2πi(km/M + ln/N)).
/// Returns (re, im). O(M²N²); keep inputs small.
pub fn dft2_double_sum(x: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let m = x.len();
    let n = if m > 0 { x[0].len() } else { 0 };
    let mut re = vec![vec![0.0; n]; m];
    let mut im = vec![vec![0.0; n]; m];
    for k in 0..m {
        for l in 0..n {
            let mut acc_re = 0.0;
            let mut acc_im = 0.0;
            for (mi, row) in x.iter().enumerate() {
                for (ni, &v) in row.iter().enumerate() {
                    let angle = -2.0
                        * std::f64::consts::PI
                        * ((k * mi) as f64 / m as f64 + (l * ni) as f64 / n as f64);
                    acc_re += v * angle.cos();
                    acc_im += v * angle.sin();
                }
            }
            re[k][l] = acc_re;
            im[k][l] = acc_im;
        }
    }
    (re, im)
}

/// Inverse 2-D DFT from the definition, with the 1/(MN) normalization.
pub fn idft2_double_sum(re: &[Vec<f64>], im: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let m = re.len();
    let n = if m > 0 { re[0].len() } else { 0 };
    let scale = 1.0 / (m * n) as f64;
    let mut out_re = vec![vec![0.0; n]; m];
    let mut out_im = vec![vec![0.0; n]; m];
    for k in 0..m {
        for l in 0..n {
            let mut acc_re = 0.0;
            let mut acc_im = 0.0;
            for mi in 0..m {
                for ni in 0..n {
                    let angle = 2.0
                        * std::f64::consts::PI
                        * ((k * mi) as f64 / m as f64 + (l * ni) as f64 / n as f64);
                    let (c, s) = (angle.cos(), angle.sin());
                    acc_re += re[mi][ni] * c - im[mi][ni] * s;
                    acc_im += re[mi][ni] * s + im[mi][ni] * c;
                }
            }
            out_re[k][l] = acc_re * scale;
            out_im[k][l] = acc_im * scale;
        }
    }
    (out_re, out_im)
}

/// Eigenvalues of a symmetric matrix, descending. Householder reflections
/// reduce the matrix to tridiagonal form, then each eigenvalue is isolated
/// by bisection on the Sturm-sequence count, i.e. by sign changes of the
/// characteristic polynomial's leading principal minors. No iteration can
/// stall: the count is monotone in the bisection point.
pub fn sym_eigenvalues_qr(a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    if n == 0 {
        return Vec::new();
    }
    let (diag, off) = tridiagonalize(a);
    let scale = diag
        .iter()
        .chain(off.iter())
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
        .max(1e-300);
    let mut lo_all = f64::INFINITY;
    let mut hi_all = f64::NEG_INFINITY;
    for i in 0..n {
        let spread = off.get(i.wrapping_sub(1)).map_or(0.0, |v| v.abs())
            + off.get(i).map_or(0.0, |v| v.abs());
        lo_all = lo_all.min(diag[i] - spread);
        hi_all = hi_all.max(diag[i] + spread);
    }
    lo_all -= scale * 1e-12;
    hi_all += scale * 1e-12;

    // Counts eigenvalues strictly below x via the Sturm recurrence.
    let count_below = |x: f64| -> usize {
        let mut count = 0;
        let mut q = 1.0;
        for i in 0..n {
            let e2 = if i == 0 { 0.0 } else { off[i - 1] * off[i - 1] };
            q = diag[i] - x - if q == 0.0 { e2 / (1e-300) } else { e2 / q };
            if q < 0.0 {
                count += 1;
            }
        }
        count
    };

    let mut eigs = Vec::with_capacity(n);
    for j in 0..n {
        let (mut lo, mut hi) = (lo_all, hi_all);
        for _ in 0..120 {
            let mid = 0.5 * (lo + hi);
            if count_below(mid) >= j + 1 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        eigs.push(0.5 * (lo + hi));
    }
    eigs.reverse();
    eigs
}

/// Householder similarity reduction of a symmetric matrix to tridiagonal
/// form. Returns (diagonal, off-diagonal). Builds each reflector as a full
/// matrix and multiplies naively; oracle-grade, not production-grade.
fn tridiagonalize(a: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = a.len();
    let mut work = a.to_vec();
    for k in 0..n.saturating_sub(2) {
        let col: Vec<f64> = (k + 1..n).map(|i| work[i][k]).collect();
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if col[0] >= 0.0 { -norm } else { norm };
        let mut v = col.clone();
        v[0] -= alpha;
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            continue;
        }
        for x in v.iter_mut() {
            *x /= vnorm;
        }
        let mut h = vec![vec![0.0; n]; n];
        for (i, row) in h.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for i in 0..v.len() {
            for j in 0..v.len() {
                h[k + 1 + i][k + 1 + j] -= 2.0 * v[i] * v[j];
            }
        }
        work = matmul_naive(&matmul_naive(&h, &work), &h);
    }
    let diag = (0..n).map(|i| work[i][i]).collect();
    let off = (0..n.saturating_sub(1)).map(|i| work[i + 1][i]).collect();
    (diag, off)
}

/// A discrete structural model for simulation: P(z) and P(y | x, z).
pub struct ScmTables {
    pub z_probs: Vec<f64>,
    /// Indexed [x][z] -> distribution over y.
    pub y_given_xz: Vec<Vec<Vec<f64>>>,
}

/// Monte-Carlo estimate of P(y | do(x)): draw z from P(z) (ignoring any
/// observational dependence on x, which is what intervening means), then
/// draw y from P(y | x, z). Returns the empirical distribution over y.
pub fn simulate_do(scm: &ScmTables, x: usize, draws: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let y_card = scm.y_given_xz[x][0].len();
    let mut counts = vec![0usize; y_card];
    for _ in 0..draws {
        let z = sample_index(&scm.z_probs, rng);
        let y = sample_index(&scm.y_given_xz[x][z], rng);
        counts[y] += 1;
    }
    counts.iter().map(|c| *c as f64 / draws as f64).collect()
}

fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Standard error of a Bernoulli proportion estimate, for 3σ bands.
pub fn proportion_stderr(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}
