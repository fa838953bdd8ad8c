//! Binary frequency-domain masks over DFT index grids.
//!
//! Frequencies are measured radially with wraparound, so index i on an axis
//! of length n sits at min(i, n-i)/n. The radius is normalized by √0.5,
//! placing the even-size Nyquist corner exactly at 1. A mask must be
//! symmetric under index negation, (i,j) ↦ (-i mod rows, -j mod cols);
//! that symmetry is what keeps masked spectra of real signals conjugate
//! symmetric, hence real after inversion.

use crate::error::{Error, Result};
use crate::numerics::fourier::ComplexMap;

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMask {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    cutoff: f64,
}

/// Normalized radial frequency of bin (i, j) on a rows×cols grid, in [0, 1].
pub fn radial_frequency(i: usize, j: usize, rows: usize, cols: usize) -> f64 {
    let fi = i.min(rows - i) as f64 / rows as f64;
    let fj = j.min(cols - j) as f64 / cols as f64;
    (fi * fi + fj * fj).sqrt() / 0.5_f64.sqrt()
}

impl FrequencyMask {
    /// Validates value range and negation symmetry of caller-built masks.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, cutoff: f64) -> Result<Self> {
        if rows * cols != values.len() {
            return Err(Error::shape(format!(
                "{rows}x{cols} mask needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::config(format!("mask value {v} outside [0, 1]")));
        }
        for i in 0..rows {
            for j in 0..cols {
                let ni = (rows - i) % rows;
                let nj = (cols - j) % cols;
                if values[i * cols + j] != values[ni * cols + nj] {
                    return Err(Error::config(format!(
                        "mask not symmetric under index negation at ({i},{j})"
                    )));
                }
            }
        }
        Ok(FrequencyMask { rows, cols, values, cutoff })
    }

    pub fn all_pass(rows: usize, cols: usize) -> Self {
        FrequencyMask { rows, cols, values: vec![1.0; rows * cols], cutoff: 0.0 }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn is_all_pass(&self) -> bool {
        self.values.iter().all(|v| *v == 1.0)
    }

    /// True when the DC bin is fully suppressed, i.e. constants map to zero.
    pub fn kills_dc(&self) -> bool {
        self.values[0] == 0.0
    }

    /// The pointwise complement 1 - m, e.g. the low-pass paired with a
    /// high-pass. Negation symmetry is preserved, the cutoff is inherited
    /// as provenance.
    pub fn complement(&self) -> FrequencyMask {
        FrequencyMask {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| 1.0 - v).collect(),
            cutoff: self.cutoff,
        }
    }
}

/// Binary high-pass: bins strictly below `cutoff` in normalized radial
/// frequency are zeroed, everything else passes. Any cutoff > 0 removes DC.
pub fn make_highpass(rows: usize, cols: usize, cutoff: f64) -> Result<FrequencyMask> {
    if rows == 0 || cols == 0 {
        return Err(Error::shape("high-pass mask needs rows, cols >= 1".to_string()));
    }
    if !(0.0..=1.0).contains(&cutoff) || cutoff.is_nan() {
        return Err(Error::config(format!("high-pass cutoff {cutoff} outside [0, 1]")));
    }
    let mut values = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let pass = radial_frequency(i, j, rows, cols) >= cutoff;
            values.push(if pass { 1.0 } else { 0.0 });
        }
    }
    Ok(FrequencyMask { rows, cols, values, cutoff })
}

/// Entry-wise product of a spectrum with a mask.
pub fn apply_mask(x: &ComplexMap, mask: &FrequencyMask) -> Result<ComplexMap> {
    if x.rows() != mask.rows || x.cols() != mask.cols {
        return Err(Error::shape(format!(
            "apply_mask: spectrum {}x{} vs mask {}x{}",
            x.rows(),
            x.cols(),
            mask.rows,
            mask.cols
        )));
    }
    let re = x.re().iter().zip(&mask.values).map(|(v, m)| v * m).collect();
    let im = x.im().iter().zip(&mask.values).map(|(v, m)| v * m).collect();
    ComplexMap::new(x.rows(), x.cols(), re, im)
}
