//! Proximal gradient with backtracking for `f(x) + λ Σ_{k<dim-1} |x_k|`,
//! where the last coordinate (the field) is unpenalized.
//!
//! Monotone accelerated variant: the extrapolated point drives the step,
//! but the reported iterate only moves when the penalized objective does
//! not increase, and momentum restarts whenever a step is rejected. A step
//! taken from the iterate itself (no momentum) satisfies the sufficient
//! decrease condition and is always accepted, so that progress continues
//! once objective differences fall below rounding.

use crate::error::{Error, Result};

use super::{kkt_residual, SolverOutcome};

pub(crate) trait Smooth {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ProxParams {
    pub lambda: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub initial_step: f64,
    pub record_trace: bool,
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn penalty(x: &[f64], lambda: f64) -> f64 {
    lambda * x[..x.len() - 1].iter().map(|v| v.abs()).sum::<f64>()
}

pub(crate) fn minimize<F: Smooth>(f: &F, x0: &[f64], params: ProxParams) -> Result<SolverOutcome> {
    let p = f.dim();
    let lambda = params.lambda;
    let mut x = x0.to_vec();
    let mut x_prev = x.clone();
    let mut grad_x = vec![0.0; p];
    let fx = f.value_grad(&x, &mut grad_x);
    let mut obj_x = fx + penalty(&x, lambda);
    let mut residual = kkt_residual(&x, &grad_x, lambda);
    let mut y = x.clone();
    let mut grad_y = vec![0.0; p];
    let mut z = vec![0.0; p];
    let mut grad_z = vec![0.0; p];
    let mut t = 1.0f64;
    let mut at_x = true;
    let mut step = params.initial_step;
    let mut trace = Vec::new();
    if params.record_trace {
        trace.push(obj_x);
    }
    let mut iterations = 0;
    let mut converged = residual <= params.tolerance;

    while !converged && iterations < params.max_iterations {
        iterations += 1;
        let fy = f.value_grad(&y, &mut grad_y);
        // Backtracking: halve until the quadratic upper model holds at z.
        let mut fz;
        loop {
            for k in 0..p {
                let v = y[k] - step * grad_y[k];
                z[k] = if k + 1 == p { v } else { soft_threshold(v, step * lambda) };
            }
            fz = f.value(&z);
            let mut model = fy;
            let mut sq = 0.0;
            for k in 0..p {
                let d = z[k] - y[k];
                model += grad_y[k] * d;
                sq += d * d;
            }
            model += sq / (2.0 * step);
            if fz <= model + 1e-14 * fy.abs().max(1.0) || sq == 0.0 {
                break;
            }
            step *= 0.5;
            if step < 1e-30 {
                return Err(Error::Internal("proximal gradient step underflow".into()));
            }
        }
        let obj_z = fz + penalty(&z, lambda);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if obj_z <= obj_x || at_x {
            x_prev.copy_from_slice(&x);
            x.copy_from_slice(&z);
            f.value_grad(&x, &mut grad_z);
            grad_x.copy_from_slice(&grad_z);
            obj_x = obj_z;
            let momentum = (t - 1.0) / t_next;
            for k in 0..p {
                y[k] = x[k] + momentum * (x[k] - x_prev[k]);
            }
            t = t_next;
            at_x = momentum == 0.0;
        } else {
            // Rejected: restart momentum from the current iterate.
            y.copy_from_slice(&x);
            t = 1.0;
            at_x = true;
        }
        if params.record_trace {
            trace.push(obj_x);
        }
        residual = kkt_residual(&x, &grad_x, lambda);
        converged = residual <= params.tolerance;
    }
    Ok(SolverOutcome { x, objective: obj_x, iterations, converged, kkt_residual: residual, trace })
}
