//! Brute-force causal oracle over finite structural models.
//!
//! Everything here is exact enumeration: back-door adjustment, the
//! idealized attention construction that reproduces it, the spectral
//! identity check, directional invariance probing, and the joint
//! invariance loss. No sampling, no approximation beyond fp64.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{filter_map, matmul, FrequencyMask, Matrix};

/// Probability mass bookkeeping tolerance for distributions.
const DIST_TOL: f64 = 1e-12;

/// Matches the epsilon inside the tape's smoothed L2 difference, so the
/// scalar loss below and the differentiated loss agree bitwise.
const L2_EPS: f64 = 1e-12;

/// Finite structural model: a confounder Z with marginal P(z) and the
/// full conditional table P(y | x, z), both enumerated.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteScm {
    z_probs: Vec<f64>,
    /// Indexed [x][z], each entry a distribution over y.
    table: Vec<Vec<Vec<f64>>>,
}

/// On-disk form: the table is keyed by "x,z" strings.
#[derive(Serialize, Deserialize)]
struct ScmFile {
    z_probs: Vec<f64>,
    table: BTreeMap<String, Vec<f64>>,
}

fn check_distribution(what: &str, probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::config(format!("{what}: empty distribution")));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::config(format!("{what}: negative or non-finite mass")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > DIST_TOL {
        return Err(Error::config(format!("{what}: mass sums to {total}, not 1")));
    }
    Ok(())
}

impl DiscreteScm {
    /// `table[x][z]` is P(y | x, z). Every distribution must sum to 1
    /// within 1e-12, and the table must be rectangular: same z count as
    /// `z_probs`, same y cardinality everywhere.
    pub fn new(z_probs: Vec<f64>, table: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        check_distribution("p(z)", &z_probs)?;
        if table.is_empty() {
            return Err(Error::config("scm: no x states"));
        }
        let y_card = table[0].first().map(|d| d.len()).unwrap_or(0);
        for (x, per_z) in table.iter().enumerate() {
            if per_z.len() != z_probs.len() {
                return Err(Error::config(format!(
                    "scm: x={x} covers {} z states, marginal has {}",
                    per_z.len(),
                    z_probs.len()
                )));
            }
            for (z, dist) in per_z.iter().enumerate() {
                if dist.len() != y_card {
                    return Err(Error::config(format!(
                        "scm: p(y|x={x},z={z}) has {} outcomes, expected {y_card}",
                        dist.len()
                    )));
                }
                check_distribution(&format!("p(y|x={x},z={z})"), dist)?;
            }
        }
        Ok(DiscreteScm { z_probs, table })
    }

    pub fn z_states(&self) -> usize {
        self.z_probs.len()
    }

    pub fn x_states(&self) -> usize {
        self.table.len()
    }

    pub fn y_states(&self) -> usize {
        self.table[0][0].len()
    }

    pub fn p_z(&self) -> &[f64] {
        &self.z_probs
    }

    pub fn p_y_given_xz(&self, x: usize, z: usize) -> Result<&[f64]> {
        let per_z = self
            .table
            .get(x)
            .ok_or_else(|| Error::lookup(format!("scm: no x state {x}")))?;
        per_z
            .get(z)
            .map(|d| d.as_slice())
            .ok_or_else(|| Error::lookup(format!("scm: no z state {z}")))
    }

    /// Serializes as {z_probs, table: {"x,z": [y probs]}}.
    pub fn to_json(&self) -> Result<String> {
        let mut flat = BTreeMap::new();
        for (x, per_z) in self.table.iter().enumerate() {
            for (z, dist) in per_z.iter().enumerate() {
                flat.insert(format!("{x},{z}"), dist.clone());
            }
        }
        let file = ScmFile { z_probs: self.z_probs.clone(), table: flat };
        serde_json::to_string_pretty(&file)
            .map_err(|e| Error::format(format!("scm encode: {e}")))
    }

    /// Parses the `to_json` format. The table must cover every (x, z)
    /// pair for a contiguous x range starting at 0.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScmFile =
            serde_json::from_str(text).map_err(|e| Error::format(format!("scm parse: {e}")))?;
        let mut cells: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        for (key, dist) in file.table {
            let (xs, zs) = key
                .split_once(',')
                .ok_or_else(|| Error::format(format!("scm key {key:?}: want \"x,z\"")))?;
            let x: usize = xs
                .trim()
                .parse()
                .map_err(|_| Error::format(format!("scm key {key:?}: bad x index")))?;
            let z: usize = zs
                .trim()
                .parse()
                .map_err(|_| Error::format(format!("scm key {key:?}: bad z index")))?;
            cells.insert((x, z), dist);
        }
        let n_x = cells.keys().map(|(x, _)| x + 1).max().unwrap_or(0);
        let n_z = file.z_probs.len();
        let mut table = Vec::with_capacity(n_x);
        for x in 0..n_x {
            let mut per_z = Vec::with_capacity(n_z);
            for z in 0..n_z {
                let dist = cells
                    .remove(&(x, z))
                    .ok_or_else(|| Error::format(format!("scm table: missing entry {x},{z}")))?;
                per_z.push(dist);
            }
            table.push(per_z);
        }
        if let Some(((x, z), _)) = cells.into_iter().next() {
            return Err(Error::format(format!("scm table: stray entry {x},{z}")));
        }
        DiscreteScm::new(file.z_probs, table)
    }
}

/// P(y | do(x)) = Σ_z P(y | x, z) · P(z), enumerated exactly.
pub fn backdoor_adjust(scm: &DiscreteScm, x_index: usize) -> Result<Vec<f64>> {
    if x_index >= scm.x_states() {
        return Err(Error::lookup(format!(
            "backdoor: x={x_index} outside 0..{}",
            scm.x_states()
        )));
    }
    let mut out = vec![0.0; scm.y_states()];
    for (z, &pz) in scm.z_probs.iter().enumerate() {
        for (y, &pyxz) in scm.table[x_index][z].iter().enumerate() {
            out[y] += pyxz * pz;
        }
    }
    Ok(out)
}

/// How the idealized attention row weights the confounder states.
#[derive(Debug, Clone)]
pub enum ConfounderWeighting {
    /// Rows carry the marginal P(z); this is the branch that reproduces
    /// the back-door adjustment exactly.
    Marginal,
    /// Rows carry P(z | x): one row per x state. Reported, not asserted,
    /// since the adjustment formula needs the marginal.
    Conditional(Matrix),
}

/// Comparison outcome over a batch of structural models, serialized by
/// the oracle report command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivReport {
    pub max_abs_diff: f64,
    pub cases: usize,
}

/// Builds the one-key-per-confounder attention instance (weights from
/// `weighting`, values V_z = P(y | x, z)), computes ΔX_x = Σ_z A_xz V_z
/// through an actual matrix product, and returns the largest absolute
/// deviation from `backdoor_adjust` across all x.
pub fn attention_backdoor_equiv(
    scm: &DiscreteScm,
    weighting: &ConfounderWeighting,
) -> Result<f64> {
    let n_z = scm.z_states();
    let n_y = scm.y_states();
    if let ConfounderWeighting::Conditional(m) = weighting {
        if m.rows() != scm.x_states() || m.cols() != n_z {
            return Err(Error::shape(format!(
                "conditional weights {}x{} vs {} x states, {n_z} z states",
                m.rows(),
                m.cols(),
                scm.x_states()
            )));
        }
        for x in 0..m.rows() {
            check_distribution(&format!("p(z|x={x})"), m.row(x))?;
        }
    }
    let mut worst = 0.0f64;
    for x in 0..scm.x_states() {
        let weights = match weighting {
            ConfounderWeighting::Marginal => {
                Matrix::new(1, n_z, scm.z_probs.clone())?
            }
            ConfounderWeighting::Conditional(m) => {
                Matrix::new(1, n_z, m.row(x).to_vec())?
            }
        };
        let values = Matrix::from_fn(n_z, n_y, |z, y| scm.table[x][z][y]);
        let delta = matmul(&weights, &values)?;
        let adjusted = backdoor_adjust(scm, x)?;
        for y in 0..n_y {
            worst = worst.max((delta.get(0, y) - adjusted[y]).abs());
        }
    }
    Ok(worst)
}

/// Random model with 1..=max states per variable; every distribution is
/// normalized uniform mass bounded away from zero.
pub fn random_scm(
    rng: &mut impl Rng,
    max_z: usize,
    max_x: usize,
    max_y: usize,
) -> Result<DiscreteScm> {
    if max_z == 0 || max_x == 0 || max_y == 0 {
        return Err(Error::config("random scm: zero-state variable"));
    }
    let n_z = rng.gen_range(1..=max_z);
    let n_x = rng.gen_range(1..=max_x);
    let n_y = rng.gen_range(1..=max_y);
    let mut draw_dist = |n: usize| -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    };
    let z_probs = draw_dist(n_z);
    let table: Vec<Vec<Vec<f64>>> =
        (0..n_x).map(|_| (0..n_z).map(|_| draw_dist(n_y)).collect()).collect();
    DiscreteScm::new(z_probs, table)
}

/// Runs `attention_backdoor_equiv` with marginal weighting on `cases`
/// random models and keeps the worst deviation.
pub fn equivalence_sweep(
    rng: &mut impl Rng,
    cases: usize,
    max_z: usize,
    max_x: usize,
    max_y: usize,
) -> Result<EquivReport> {
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let scm = random_scm(rng, max_z, max_x, max_y)?;
        worst = worst.max(attention_backdoor_equiv(&scm, &ConfounderWeighting::Marginal)?);
    }
    Ok(EquivReport { max_abs_diff: worst, cases })
}

fn weighted_sum(coeffs: &[f64], mats: &[Matrix]) -> Matrix {
    let mut acc = Matrix::zeros(mats[0].rows(), mats[0].cols());
    for (c, m) in coeffs.iter().zip(mats) {
        for (a, v) in acc.data_mut().iter_mut().zip(m.data()) {
            *a += c * v;
        }
    }
    acc
}

/// Largest entrywise gap between the confounder expectation of the
/// supplied per-state features and the truncated weighted reconstruction:
/// max |Σ_z P(z) f(X,z) − Σ_{i<k} σ_i u_i|. Under the isomorphic
/// construction (f(X,z_i) = u_i, σ_i = P(z_i), k = |Z|) the two sums are
/// the same arithmetic and the gap is zero.
pub fn ideal_identity_check(
    scm: &DiscreteScm,
    f_of_z: &[Matrix],
    u: &[Matrix],
    sigma: &[f64],
) -> Result<f64> {
    if f_of_z.len() != scm.z_states() {
        return Err(Error::shape(format!(
            "ideal identity: {} feature maps for {} z states",
            f_of_z.len(),
            scm.z_states()
        )));
    }
    if u.len() != sigma.len() {
        return Err(Error::shape(format!(
            "ideal identity: {} directions vs {} scales",
            u.len(),
            sigma.len()
        )));
    }
    if u.len() > scm.z_states() {
        return Err(Error::shape(format!(
            "ideal identity: rank {} exceeds {} z states",
            u.len(),
            scm.z_states()
        )));
    }
    let shape = (f_of_z[0].rows(), f_of_z[0].cols());
    for m in f_of_z.iter().chain(u.iter()) {
        if (m.rows(), m.cols()) != shape {
            return Err(Error::shape(format!(
                "ideal identity: mixed shapes {}x{} and {}x{}",
                shape.0,
                shape.1,
                m.rows(),
                m.cols()
            )));
        }
    }
    let expectation = weighted_sum(&scm.z_probs, f_of_z);
    let reconstruction = if u.is_empty() {
        Matrix::zeros(shape.0, shape.1)
    } else {
        weighted_sum(sigma, u)
    };
    Ok(expectation.max_abs_diff(&reconstruction))
}

/// One exact witness for the ideal identity: random orthonormal
/// directions u_i (one per confounder state), features equal to them,
/// scales equal to P(z). Feeding the parts to `ideal_identity_check`
/// yields zero; perturbing `f_of_z` makes the gap grow linearly.
#[derive(Debug, Clone)]
pub struct IdealConstruction {
    pub f_of_z: Vec<Matrix>,
    pub u: Vec<Matrix>,
    pub sigma: Vec<f64>,
}

/// Orthonormalizes random Gaussian columns (modified Gram-Schmidt, two
/// passes). Needs dim ≥ |Z| so the directions can be orthonormal.
pub fn isomorphic_construction(
    scm: &DiscreteScm,
    dim: usize,
    rng: &mut impl Rng,
) -> Result<IdealConstruction> {
    let k = scm.z_states();
    if dim < k {
        return Err(Error::config(format!(
            "isomorphic construction: dim {dim} cannot hold {k} orthonormal directions"
        )));
    }
    let mut u: Vec<Matrix> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut v = Matrix::from_fn(dim, 1, |_, _| StandardNormal.sample(rng));
        // Two projection passes keep the basis orthonormal to fp accuracy
        // even when a fresh draw lands near the existing span.
        for _ in 0..2 {
            for prev in &u {
                let dot: f64 =
                    v.data().iter().zip(prev.data()).map(|(a, b)| a * b).sum();
                v = v.sub(&prev.scale(dot))?;
            }
        }
        let norm = v.frobenius_norm();
        if norm < 1e-8 {
            return Err(Error::numeric(
                "isomorphic construction: degenerate direction draw",
            ));
        }
        u.push(v.scale(1.0 / norm));
    }
    Ok(IdealConstruction {
        f_of_z: u.clone(),
        u,
        sigma: scm.z_probs.clone(),
    })
}

/// The frequency response defining which content counts as causal.
#[derive(Debug, Clone)]
pub struct CausalFilter {
    pub h_causal: FrequencyMask,
}

impl CausalFilter {
    pub fn highpass(rows: usize, cols: usize, cutoff: f64) -> Result<Self> {
        Ok(CausalFilter { h_causal: crate::numerics::make_highpass(rows, cols, cutoff)? })
    }

    /// The complementary low-pass response 1 − H; its output is the
    /// spurious component the joint loss shrinks.
    pub fn spurious_complement(&self) -> CausalFilter {
        CausalFilter { h_causal: self.h_causal.complement() }
    }
}

/// f_C(x) = idft(H ⊙ dft(x)) on a single-channel map.
pub fn causal_filter_apply(x: &Matrix, f: &CausalFilter) -> Result<Matrix> {
    filter_map(x, &f.h_causal)
}

/// Mean directional-derivative norm of `forward` at `prompts`, probed by
/// central differences along random unit-Frobenius directions. A forward
/// that ignores its argument scores zero; the identity scores one.
pub fn invariance_check<F>(
    mut forward: F,
    prompts: &Matrix,
    num_probes: usize,
    eps: f64,
    rng: &mut impl Rng,
) -> Result<f64>
where
    F: FnMut(&Matrix) -> Result<Matrix>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::config(format!("invariance probe step {eps} must be positive")));
    }
    if num_probes == 0 {
        return Err(Error::config("invariance check needs at least one probe"));
    }
    let mut total = 0.0;
    for _ in 0..num_probes {
        let raw = Matrix::from_fn(prompts.rows(), prompts.cols(), |_, _| {
            StandardNormal.sample(rng)
        });
        let norm = raw.frobenius_norm();
        if norm == 0.0 {
            return Err(Error::numeric("invariance check drew a zero direction"));
        }
        let dir = raw.scale(1.0 / norm);
        let plus = forward(&prompts.add(&dir.scale(eps))?)?;
        let minus = forward(&prompts.sub(&dir.scale(eps))?)?;
        let deriv = plus.sub(&minus)?.scale(1.0 / (2.0 * eps));
        if deriv.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("invariance check: non-finite forward evaluation"));
        }
        total += deriv.frobenius_norm();
    }
    Ok(total / num_probes as f64)
}

/// Joint invariance loss over a batch:
/// mean_b [ ‖f_S(x_b+δ)‖₁ + λ · ‖f_C(x_b+δ) − f_C(x_b)‖₂ ].
/// The L2 factor is smoothed as √(ss + 1e-12) − √1e-12 so it stays
/// differentiable at zero drift while an exact zero drift still scores 0.
pub fn causal_loss(
    f_s_out: &[Matrix],
    f_c_shifted: &[Matrix],
    f_c_clean: &[Matrix],
    lambda_inv: f64,
) -> Result<f64> {
    if f_s_out.is_empty() || f_s_out.len() != f_c_shifted.len() || f_s_out.len() != f_c_clean.len()
    {
        return Err(Error::config(format!(
            "causal loss: batch lengths {} / {} / {}",
            f_s_out.len(),
            f_c_shifted.len(),
            f_c_clean.len()
        )));
    }
    let mut total = 0.0;
    for ((s, shifted), clean) in f_s_out.iter().zip(f_c_shifted).zip(f_c_clean) {
        let drift = shifted.sub(clean)?;
        let ss: f64 = drift.data().iter().map(|v| v * v).sum();
        let l1: f64 = s.data().iter().map(|v| v.abs()).sum();
        total += l1 + lambda_inv * ((ss + L2_EPS).sqrt() - L2_EPS.sqrt());
    }
    // Reciprocal multiply, not division: the differentiated twin on the
    // tape averages through a scale node, and the two must agree bitwise.
    Ok(total * (1.0 / f_s_out.len() as f64))
}
