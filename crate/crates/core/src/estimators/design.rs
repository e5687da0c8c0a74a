//! Per-node regression design.
//!
//! For node `u`, each update contributes a row of signs
//! `s_k = σ_u¹ σ_k⁰` (for `k ≠ u`) followed by `s_H = σ_u¹`, so that the
//! exponent of both objectives is the linear score `z = Σ_k s_k x_k` with
//! `x = (J_u, H_u)`. Identical rows are merged and weighted by their
//! multiplicity, which matters for trajectories that revisit a few states.

use std::cell::Cell;
use std::collections::HashMap;

use crate::dynamics::SampleSet;
use crate::error::{Error, Result};

/// Exponents are clamped to this magnitude before `exp`.
pub const EXP_CLAMP: f64 = 700.0;

#[derive(Debug, Clone)]
pub struct NodeDesign {
    node: usize,
    n: usize,
    /// Unique rows stored column-major: entry `(r, k)` is `cols[k * rows + r]`.
    cols: Vec<i8>,
    weights: Vec<f64>,
    rows: usize,
    m_u: usize,
    clamp_events: Cell<u64>,
}

impl NodeDesign {
    pub fn new(samples: &SampleSet, node: usize) -> Result<Self> {
        let n = samples.n();
        if node >= n {
            return Err(Error::IndexOutOfRange { index: node, n });
        }
        let m_u = samples.count(node);
        if m_u == 0 {
            return Err(Error::NoUpdates { node });
        }
        let p = n;
        let words = p.div_ceil(64);
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut unique: Vec<Vec<i8>> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        let mut key = vec![0u64; words];
        let mut row = vec![0i8; p];
        for t in samples.indices_for(node) {
            let s1 = samples.new_spin(t);
            let s0 = samples.sigma0(t);
            let mut c = 0;
            for (k, &v) in s0.iter().enumerate() {
                if k != node {
                    row[c] = s1 * v;
                    c += 1;
                }
            }
            row[p - 1] = s1;
            key.iter_mut().for_each(|w| *w = 0);
            for (k, &v) in row.iter().enumerate() {
                if v > 0 {
                    key[k / 64] |= 1 << (k % 64);
                }
            }
            match index.get(key.as_slice()) {
                Some(&r) => counts[r] += 1,
                None => {
                    index.insert(key.clone(), unique.len());
                    unique.push(row.clone());
                    counts.push(1);
                }
            }
        }
        let rows = unique.len();
        let mut cols = vec![0i8; rows * p];
        for (r, row) in unique.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                cols[k * rows + r] = v;
            }
        }
        let inv = 1.0 / m_u as f64;
        let weights = counts.iter().map(|&c| c as f64 * inv).collect();
        Ok(Self { node, n, cols, weights, rows, m_u, clamp_events: Cell::new(0) })
    }

    pub fn node(&self) -> usize {
        self.node
    }

    /// Number of parameters: `n - 1` couplings plus the field.
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn m_u(&self) -> usize {
        self.m_u
    }

    pub fn unique_rows(&self) -> usize {
        self.rows
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn column(&self, k: usize) -> &[i8] {
        &self.cols[k * self.rows..(k + 1) * self.rows]
    }

    pub fn clamp_events(&self) -> u64 {
        self.clamp_events.get()
    }

    /// `z = S x` for every unique row.
    pub fn scores(&self, x: &[f64], z: &mut Vec<f64>) {
        z.clear();
        z.resize(self.rows, 0.0);
        for (k, &xk) in x.iter().enumerate() {
            if xk == 0.0 {
                continue;
            }
            for (zr, &s) in z.iter_mut().zip(self.column(k)) {
                *zr += xk * f64::from(s);
            }
        }
    }

    #[inline]
    pub(crate) fn clamped_exp(&self, e: f64) -> f64 {
        if e.abs() > EXP_CLAMP {
            self.clamp_events.set(self.clamp_events.get() + 1);
            e.clamp(-EXP_CLAMP, EXP_CLAMP).exp()
        } else {
            e.exp()
        }
    }

    /// Weighted residual terms `v_r` and the objective value, then
    /// `grad_k = Σ_r v_r s_rk` scaled by `scale`.
    fn finish_gradient(&self, v: &[f64], scale: f64, grad: &mut [f64]) {
        for (k, g) in grad.iter_mut().enumerate() {
            let acc: f64 = self.column(k).iter().zip(v).map(|(&s, &vr)| f64::from(s) * vr).sum();
            *g = scale * acc;
        }
    }

    pub fn iso_value(&self, x: &[f64]) -> f64 {
        let mut z = Vec::new();
        self.scores(x, &mut z);
        z.iter().zip(&self.weights).map(|(&zr, &w)| w * self.clamped_exp(-zr)).sum()
    }

    pub fn iso_value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut z = Vec::new();
        self.scores(x, &mut z);
        let v: Vec<f64> = z.iter().zip(&self.weights).map(|(&zr, &w)| w * self.clamped_exp(-zr)).collect();
        self.finish_gradient(&v, -1.0, grad);
        v.iter().sum()
    }

    pub fn pl_value(&self, x: &[f64]) -> f64 {
        let mut z = Vec::new();
        self.scores(x, &mut z);
        z.iter().zip(&self.weights).map(|(&zr, &w)| w * softplus(-2.0 * zr)).sum::<f64>() - std::f64::consts::LN_2
    }

    pub fn pl_value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut z = Vec::new();
        self.scores(x, &mut z);
        let mut value = 0.0;
        let v: Vec<f64> = z
            .iter()
            .zip(&self.weights)
            .map(|(&zr, &w)| {
                value += w * softplus(-2.0 * zr);
                w * logistic(-2.0 * zr)
            })
            .collect();
        self.finish_gradient(&v, -2.0, grad);
        value - std::f64::consts::LN_2
    }
}

/// `ln(1 + e^t)` without overflow.
#[inline]
pub(crate) fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `1 / (1 + e^{-t})`.
#[inline]
pub(crate) fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}
