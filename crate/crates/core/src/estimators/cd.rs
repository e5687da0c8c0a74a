//! Coordinate descent for the regularized interaction-screening objective.
//!
//! Along coordinate `k` the objective restricted to `x = x_k` is
//! `a (cosh x - κ sinh x) + λ|x| + const` with `κ = b / a`, which has a
//! closed-form minimizer. No step size is involved.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

use super::design::NodeDesign;
use super::{kkt_residual, CoordinateOrder, SolverConfig, SolverOutcome};

pub const DEFAULT_CD_CLAMP: f64 = 30.0;

/// Minimizer of `cosh x - κ sinh x + μ|x|` with `κ = b / a`.
///
/// Zero when `μ ≥ |κ|`; otherwise
/// `ln((sqrt(1 - κ² + μ²) - μ sign κ) / (1 - κ))`, clamped to
/// `±DEFAULT_CD_CLAMP`.
pub fn cd_coordinate_minimum(a: f64, b: f64, mu: f64) -> Result<f64> {
    cd_coordinate_minimum_clamped(a, b, mu, DEFAULT_CD_CLAMP)
}

pub fn cd_coordinate_minimum_clamped(a: f64, b: f64, mu: f64, clamp: f64) -> Result<f64> {
    if !(a > 0.0) || !b.is_finite() || !(mu >= 0.0) {
        return Err(Error::Internal(format!("invalid coordinate problem a = {a}, b = {b}, mu = {mu}")));
    }
    let mut kappa = b / a;
    if kappa.abs() > 1.0 + 1e-12 {
        return Err(Error::Internal(format!("|kappa| = {} exceeds 1", kappa.abs())));
    }
    kappa = kappa.clamp(-1.0, 1.0);
    if mu >= kappa.abs() {
        return Ok(0.0);
    }
    let root = ((1.0 - kappa) * (1.0 + kappa) + mu * mu).sqrt();
    // Both branches are the same root of (1-κ)y² + 2μ sign(κ) y - (1+κ) = 0
    // with y = e^x, rearranged so that no difference of close numbers occurs.
    // With μ = 0 and |κ| = 1 the minimum is at infinity and the clamp applies.
    let x = if kappa > 0.0 { (1.0 + kappa).ln() - (root + mu).ln() } else { (root + mu).ln() - (1.0 - kappa).ln() };
    if x.is_nan() {
        return Err(Error::Internal(format!("coordinate minimum undefined for kappa = {kappa}, mu = {mu}")));
    }
    Ok(x.clamp(-clamp, clamp))
}

/// Minimize `iso(x) + λ Σ_{k < dim-1} |x_k|` by exact coordinate
/// minimization, starting from `x0`.
pub(crate) fn minimize_iso(design: &NodeDesign, lambda: f64, x0: &[f64], cfg: &SolverConfig) -> Result<SolverOutcome> {
    let p = design.dim();
    let field = p - 1;
    let w = design.weights();
    let mut x = x0.to_vec();
    let mut z = Vec::new();
    let mut v = vec![0.0; design.unique_rows()];
    let mut grad = vec![0.0; p];
    let mut order: Vec<usize> = (0..p).collect();
    let mut rng = match cfg.order {
        CoordinateOrder::Random { seed } => Some(rng::stream(seed, Purpose::Solver, &[design.node() as u64])),
        CoordinateOrder::Cyclic => None,
    };

    let refresh = |x: &[f64], z: &mut Vec<f64>, v: &mut [f64]| {
        design.scores(x, z);
        for ((vr, &zr), &wr) in v.iter_mut().zip(z.iter()).zip(w) {
            *vr = wr * design.clamped_exp(-zr);
        }
    };

    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut converged = false;
    refresh(&x, &mut z, &mut v);
    while iterations < cfg.max_iterations {
        design.iso_value_grad(&x, &mut grad);
        residual = kkt_residual(&x, &grad, lambda);
        if residual <= cfg.tolerance {
            converged = true;
            break;
        }
        if let Some(r) = rng.as_mut() {
            order.shuffle(r);
        }
        for &k in &order {
            let col = design.column(k);
            let (mut plus, mut minus) = (0.0, 0.0);
            for (&s, &vr) in col.iter().zip(v.iter()) {
                if s > 0 {
                    plus += vr;
                } else {
                    minus += vr;
                }
            }
            // Remove the current x_k from the exponent.
            let xk = x[k];
            let a_plus = plus * xk.exp();
            let a_minus = minus * (-xk).exp();
            let a = a_plus + a_minus;
            let b = a_plus - a_minus;
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::Internal(format!("degenerate coordinate curvature a = {a}")));
            }
            let mu = if k == field { 0.0 } else { lambda / a };
            let new = cd_coordinate_minimum_clamped(a, b, mu, cfg.cd_clamp)?;
            let delta = new - xk;
            if delta != 0.0 {
                let (up, down) = ((-delta).exp(), delta.exp());
                for (&s, vr) in col.iter().zip(v.iter_mut()) {
                    *vr *= if s > 0 { up } else { down };
                }
                x[k] = new;
            }
        }
        iterations += 1;
        // Multiplicative updates drift; recompute exactly once per sweep.
        refresh(&x, &mut z, &mut v);
    }
    let value = design.iso_value(&x);
    let l1: f64 = x[..field].iter().map(|v| v.abs()).sum();
    Ok(SolverOutcome {
        x,
        objective: value + lambda * l1,
        iterations,
        converged,
        kkt_residual: residual,
        trace: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Golden-section search on [-40, 40]; the objective is convex.
    pub(crate) fn golden_section(kappa: f64, mu: f64) -> f64 {
        let f = |x: f64| x.cosh() - kappa * x.sinh() + mu * x.abs();
        let (mut lo, mut hi) = (-40.0f64, 40.0f64);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = hi - g * (hi - lo);
        let mut d = lo + g * (hi - lo);
        let (mut fc, mut fd) = (f(c), f(d));
        while hi - lo > 1e-11 {
            if fc < fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - g * (hi - lo);
                fc = f(c);
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + g * (hi - lo);
                fd = f(d);
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn soft_threshold_branch() {
        assert_eq!(cd_coordinate_minimum(1.0, 0.2, 0.3).unwrap(), 0.0);
        assert_eq!(cd_coordinate_minimum(2.0, -0.4, 0.2).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_examples() {
        // Values frozen from the golden-section oracle.
        let x = cd_coordinate_minimum(1.0, 0.5, 0.0).unwrap();
        assert_abs_diff_eq!(x, 0.5493061443340548, epsilon = 1e-12);
        // Golden section on function values resolves the minimizer to ~1e-8.
        assert_abs_diff_eq!(x, golden_section(0.5, 0.0), epsilon = 1e-7);
        let y = cd_coordinate_minimum(1.0, 0.8, 0.1).unwrap();
        assert_abs_diff_eq!(y, 0.9327077383988085, epsilon = 1e-12);
        assert_abs_diff_eq!(y, golden_section(0.8, 0.1), epsilon = 1e-7);
        let neg = cd_coordinate_minimum(1.0, -0.8, 0.1).unwrap();
        assert_abs_diff_eq!(neg, -y, epsilon = 1e-12);
    }

    #[test]
    fn boundary_and_error_paths() {
        assert_eq!(cd_coordinate_minimum(1.0, 1.0, 0.0).unwrap(), DEFAULT_CD_CLAMP);
        assert_eq!(cd_coordinate_minimum(1.0, -1.0, 0.0).unwrap(), -DEFAULT_CD_CLAMP);
        assert_eq!(cd_coordinate_minimum_clamped(1.0, 0.999999, 0.0, 2.0).unwrap(), 2.0);
        assert!(matches!(cd_coordinate_minimum(1.0, 1.1, 0.0), Err(Error::Internal(_))));
        assert!(cd_coordinate_minimum(0.0, 0.0, 0.0).is_err());
        // |κ| = 1 with a penalty still has a finite minimizer at -ln μ.
        assert_abs_diff_eq!(cd_coordinate_minimum(1.0, 1.0, 0.25).unwrap(), 4f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(cd_coordinate_minimum(1.0, -1.0, 0.25).unwrap(), -(4f64.ln()), epsilon = 1e-12);
    }
}
