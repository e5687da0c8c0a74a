//! The dynamic interaction-screening and pseudo-likelihood objectives,
//! evaluated directly from a [`SampleSet`].
//!
//! Parameters for node `u` are `couplings` (length `n - 1`, indexed by
//! `j ≠ u` in increasing order) and `field`. Gradients have length `n`:
//! the coupling part followed by the field coordinate.

use crate::dynamics::SampleSet;
use crate::error::{Error, Result};

use super::design::EXP_CLAMP;

fn check(samples: &SampleSet, u: usize, couplings: &[f64]) -> Result<usize> {
    let n = samples.n();
    if u >= n {
        return Err(Error::IndexOutOfRange { index: u, n });
    }
    if couplings.len() != n - 1 {
        return Err(Error::DimensionMismatch { expected: n - 1, got: couplings.len() });
    }
    match samples.count(u) {
        0 => Err(Error::NoUpdates { node: u }),
        m_u => Ok(m_u),
    }
}

/// `Σ_{j≠u} J_uj σ_j⁰ + H_u` for sample `t`.
fn local_score(samples: &SampleSet, t: usize, u: usize, couplings: &[f64], field: f64) -> f64 {
    let s0 = samples.sigma0(t);
    let mut acc = field;
    let mut c = 0;
    for (j, &s) in s0.iter().enumerate() {
        if j != u {
            acc += couplings[c] * f64::from(s);
            c += 1;
        }
    }
    acc
}

/// Spin of coordinate `k` of the gradient: `σ_k⁰` for couplings, 1 for the field.
fn regressor(samples: &SampleSet, t: usize, u: usize, k: usize) -> f64 {
    let n = samples.n();
    if k == n - 1 {
        1.0
    } else {
        let j = if k < u { k } else { k + 1 };
        f64::from(samples.sigma0(t)[j])
    }
}

/// `(1/m_u) Σ exp(-σ_u¹ (Σ_j J_uj σ_j⁰ + H_u))` over the updates of `u`.
pub fn d_iso_value(samples: &SampleSet, u: usize, couplings: &[f64], field: f64) -> Result<f64> {
    let m_u = check(samples, u, couplings)?;
    let total: f64 = samples
        .indices_for(u)
        .map(|t| {
            let e = -f64::from(samples.new_spin(t)) * local_score(samples, t, u, couplings, field);
            e.clamp(-EXP_CLAMP, EXP_CLAMP).exp()
        })
        .sum();
    Ok(total / m_u as f64)
}

pub fn d_iso_gradient(samples: &SampleSet, u: usize, couplings: &[f64], field: f64) -> Result<Vec<f64>> {
    let m_u = check(samples, u, couplings)?;
    let n = samples.n();
    let mut grad = vec![0.0; n];
    for t in samples.indices_for(u) {
        let s1 = f64::from(samples.new_spin(t));
        let w = (-s1 * local_score(samples, t, u, couplings, field)).clamp(-EXP_CLAMP, EXP_CLAMP).exp();
        for (k, g) in grad.iter_mut().enumerate() {
            *g -= s1 * regressor(samples, t, u, k) * w;
        }
    }
    grad.iter_mut().for_each(|g| *g /= m_u as f64);
    Ok(grad)
}

/// `-(1/m_u) Σ ln(1 + σ_u¹ tanh(Σ_j J_uj σ_j⁰ + H_u))` over the updates of `u`.
///
/// Evaluated as `ln(1 + e^{-2σh}) - ln 2`, which is the same quantity
/// without the cancellation in `1 + tanh`.
pub fn d_pl_value(samples: &SampleSet, u: usize, couplings: &[f64], field: f64) -> Result<f64> {
    let m_u = check(samples, u, couplings)?;
    let total: f64 = samples
        .indices_for(u)
        .map(|t| {
            let z = f64::from(samples.new_spin(t)) * local_score(samples, t, u, couplings, field);
            super::design::softplus(-2.0 * z)
        })
        .sum();
    Ok(total / m_u as f64 - std::f64::consts::LN_2)
}

pub fn d_pl_gradient(samples: &SampleSet, u: usize, couplings: &[f64], field: f64) -> Result<Vec<f64>> {
    let m_u = check(samples, u, couplings)?;
    let n = samples.n();
    let mut grad = vec![0.0; n];
    for t in samples.indices_for(u) {
        let s1 = f64::from(samples.new_spin(t));
        let th = local_score(samples, t, u, couplings, field).tanh();
        for (k, g) in grad.iter_mut().enumerate() {
            *g += regressor(samples, t, u, k) * (th - s1);
        }
    }
    grad.iter_mut().for_each(|g| *g /= m_u as f64);
    Ok(grad)
}
