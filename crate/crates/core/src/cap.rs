//! Cross-attention prompts with a spectral split of the score map.
//!
//! A small bank of learned prompt rows supplies keys and values; the input
//! tokens supply queries. The pre-softmax score map is factored by SVD and
//! cut at a rank k: the leading part is treated as the signal the layer
//! should keep, the tail as correlation to be penalized or removed. The
//! k = 0 and k = full cuts return exact clones instead of round-tripping
//! through the factorization, so those two splits are exact to the bit;
//! interior cuts reassemble within factorization roundoff.

use crate::error::{Error, Result};
use crate::numerics::{matmul, matmul_nt, row_softmax, svd, Matrix, SvdFactors};

/// Which score map feeds the softmax: the raw one or the rank-k truncation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    Full,
    Filtered,
}

/// Outcome of cutting a score map at rank k.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub factors: SvdFactors,
    /// The applied cut, 0 ≤ k ≤ spectrum length.
    pub k: usize,
    /// Rank-k part of the scores, n×t.
    pub causal: Matrix,
    /// Remainder `scores - causal`, n×t.
    pub spurious: Matrix,
}

/// One attention application: the token update, the score decomposition,
/// and the unweighted spectrum tail sum.
#[derive(Debug, Clone)]
pub struct CapOutput {
    pub delta_x: Matrix,
    pub decomposition: SpectralDecomposition,
    /// Σ of singular values past k, before any loss weighting.
    pub tail_sum: f64,
}

/// Q = x·w_q, K = prompts·w_k, V = prompts·w_v.
pub fn project_qkv(
    x: &Matrix,
    prompts: &Matrix,
    w_q: &Matrix,
    w_k: &Matrix,
    w_v: &Matrix,
) -> Result<(Matrix, Matrix, Matrix)> {
    let q = matmul(x, w_q)?;
    let k = matmul(prompts, w_k)?;
    let v = matmul(prompts, w_v)?;
    if q.cols() != k.cols() {
        return Err(Error::shape(format!(
            "query dim {} does not match key dim {}",
            q.cols(),
            k.cols()
        )));
    }
    Ok((q, k, v))
}

/// Pre-softmax score map Q·Kᵀ/√d, shape n×t.
pub fn attention_scores(q: &Matrix, k: &Matrix) -> Result<Matrix> {
    if q.cols() == 0 {
        return Err(Error::shape("attention over zero-dim features"));
    }
    Ok(matmul_nt(q, k)?.scale(1.0 / (q.cols() as f64).sqrt()))
}

/// U·Σ with columns past `k` zeroed, shape m×t. Columns j < k hold σ_j·u_j.
fn leading_columns(factors: &SvdFactors, k: usize) -> Matrix {
    let (m, t) = (factors.u.rows(), factors.vt.cols());
    let kept = k.min(factors.sigma.len());
    let mut out = Matrix::zeros(m, t);
    for j in 0..kept {
        for i in 0..m {
            out.set(i, j, factors.u.get(i, j) * factors.sigma[j]);
        }
    }
    out
}

/// The attention update under the idealized orthonormal-value condition:
/// A·V collapses to U·Σ, and cutting at k keeps the first k columns
/// σ_i·u_i. `v_basis_check` first verifies the right basis really is
/// orthonormal and fails with a numeric error when it is not.
pub fn causal_update(dec: &SpectralDecomposition, v_basis_check: bool) -> Result<Matrix> {
    if v_basis_check {
        let gram = matmul_nt(&dec.factors.vt, &dec.factors.vt)?;
        let drift = gram.max_abs_diff(&Matrix::identity(dec.factors.vt.rows()));
        if drift > 1e-8 {
            return Err(Error::numeric(format!(
                "right singular basis is not orthonormal, max deviation {drift:.3e}"
            )));
        }
    }
    Ok(leading_columns(&dec.factors, dec.k))
}

/// Splits `scores` into a rank-k part and its remainder.
///
/// k = 0 returns (0, scores) and k = spectrum length returns (scores, 0),
/// both without touching the factorization output, so those cuts are exact
/// to the bit. Interior cuts rebuild the leading part from the factors and
/// define the remainder by subtraction, reassembling within roundoff.
pub fn spectral_split(scores: &Matrix, k: usize) -> Result<SpectralDecomposition> {
    split_with_factors(scores, svd(scores)?, k)
}

fn split_with_factors(
    scores: &Matrix,
    factors: SvdFactors,
    k: usize,
) -> Result<SpectralDecomposition> {
    let rank_cap = factors.sigma.len();
    if k > rank_cap {
        return Err(Error::config(format!(
            "rank cut {k} exceeds spectrum length {rank_cap}"
        )));
    }
    let (causal, spurious) = if k == 0 {
        (Matrix::zeros(scores.rows(), scores.cols()), scores.clone())
    } else if k == rank_cap {
        (scores.clone(), Matrix::zeros(scores.rows(), scores.cols()))
    } else {
        let causal = matmul(&leading_columns(&factors, k), &factors.vt)?;
        let spurious = scores.sub(&causal)?;
        (causal, spurious)
    };
    Ok(SpectralDecomposition { factors, k, causal, spurious })
}

/// λ · Σ of singular values past the decomposition's cut. Zero when the
/// cut keeps the whole spectrum.
pub fn tail_penalty(dec: &SpectralDecomposition, lambda_tail: f64) -> f64 {
    lambda_tail * tail_sum(&dec.factors.sigma, dec.k)
}

/// Σ of singular values with index ≥ k.
pub fn tail_sum(sigma: &[f64], k: usize) -> f64 {
    sigma.iter().skip(k).sum()
}

/// Smallest rank whose cumulative squared spectrum reaches `fraction` of
/// the total energy. A zero spectrum needs rank 0 by this definition.
pub fn effective_rank(sigma: &[f64], fraction: f64) -> usize {
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    let target = fraction * total;
    let mut cum = 0.0;
    for (i, s) in sigma.iter().enumerate() {
        if cum >= target {
            return i;
        }
        cum += s * s;
    }
    sigma.len()
}

/// (index, σ, cumulative energy ratio) rows for spectrum reports. An
/// all-zero spectrum reports ratio 1.0 throughout rather than 0/0.
pub fn spectrum_rows(sigma: &[f64]) -> Vec<(usize, f64, f64)> {
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    let mut cum = 0.0;
    sigma
        .iter()
        .enumerate()
        .map(|(i, s)| {
            cum += s * s;
            let ratio = if total == 0.0 { 1.0 } else { cum / total };
            (i, *s, ratio)
        })
        .collect()
}

/// Fraction of spectral energy past the cut, σ²-weighted. Zero spectrum
/// reports 0 (no tail energy to remove).
pub fn tail_energy_ratio(sigma: &[f64], k: usize) -> f64 {
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return 0.0;
    }
    let tail: f64 = sigma.iter().skip(k).map(|s| s * s).sum();
    tail / total
}

/// Full attention pass. `rank_k` of `None` resolves to the 90% effective
/// rank of the current spectrum; `Filtered` mode softmaxes the rank-k
/// truncation instead of the raw scores. The penalty cut never truncates
/// the `Full` forward path.
pub fn cap_forward(
    x: &Matrix,
    prompts: &Matrix,
    w_q: &Matrix,
    w_k: &Matrix,
    w_v: &Matrix,
    rank_k: Option<usize>,
    mode: AttentionMode,
) -> Result<CapOutput> {
    if x.rows() == 0 || prompts.rows() == 0 {
        return Err(Error::config("attention needs at least one token and one prompt"));
    }
    for (name, w) in [("w_q", w_q), ("w_k", w_k), ("w_v", w_v)] {
        if w.rows() != w.cols() {
            return Err(Error::shape(format!(
                "{name} must be square, got {}x{}",
                w.rows(),
                w.cols()
            )));
        }
    }
    let (q, k_proj, v) = project_qkv(x, prompts, w_q, w_k, w_v)?;
    let scores = attention_scores(&q, &k_proj)?;
    let factors = svd(&scores)?;
    let k = rank_k.unwrap_or_else(|| effective_rank(&factors.sigma, 0.9));
    let dec = split_with_factors(&scores, factors, k)?;
    let tail = tail_sum(&dec.factors.sigma, dec.k);
    let score_map = match mode {
        AttentionMode::Full => &scores,
        AttentionMode::Filtered => &dec.causal,
    };
    let delta_x = matmul(&row_softmax(score_map), &v)?;
    Ok(CapOutput { delta_x, decomposition: dec, tail_sum: tail })
}
