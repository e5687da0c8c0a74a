//! Monte Carlo statistics of the per-sample gradient terms at the true
//! parameters, for zero-field models in the M-regime with uniform `p₀`.

use rand::Rng;

use crate::dynamics::{prob_up, Regime, SampleSet};
use crate::error::{Error, Result};
use crate::model::IsingModel;

use super::design::EXP_CLAMP;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientTerm {
    /// `X_uk = -σ_u¹ σ_k⁰ exp(-σ_u¹ Σ_j J_uj σ_j⁰)`.
    #[default]
    Screening,
    /// `Z_uk = σ_k⁰ (tanh(Σ_j J_uj σ_j⁰) - σ_u¹)`.
    PseudoLikelihood,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermStatistics {
    pub mean: f64,
    pub second_moment: f64,
    pub max_abs: f64,
    pub count: usize,
}

/// `m` updates of node `u` drawn from the M-regime with uniform `p₀`,
/// conditioned on the updated node being `u`.
///
/// In law this equals the `u`-updates of an unconditioned M-regime run;
/// drawing them directly avoids discarding a fraction `1 - 1/n`.
pub fn sample_node_updates<R: Rng + ?Sized>(model: &IsingModel, u: usize, m: usize, rng: &mut R) -> Result<SampleSet> {
    let n = model.n();
    if u >= n {
        return Err(Error::IndexOutOfRange { index: u, n });
    }
    let mut set = SampleSet::with_capacity(n, Regime::M, m);
    let mut sigma = vec![0i8; n];
    for _ in 0..m {
        for s in sigma.iter_mut() {
            *s = if rng.gen::<bool>() { 1 } else { -1 };
        }
        let p = prob_up(model.local_field(u, &sigma), 1);
        let s1 = if rng.gen::<f64>() < p { 1 } else { -1 };
        set.push_raw(&sigma, u, s1);
    }
    Ok(set)
}

/// Statistics of the gradient term for coordinate `k` over the
/// `u`-updates in `samples`, evaluated at the true couplings of `model`.
/// `k == u` selects the field coordinate (regressor 1).
pub fn term_statistics(
    model: &IsingModel,
    samples: &SampleSet,
    u: usize,
    k: usize,
    term: GradientTerm,
) -> Result<TermStatistics> {
    let n = model.n();
    if u >= n || k >= n {
        return Err(Error::IndexOutOfRange { index: u.max(k), n });
    }
    if samples.n() != n {
        return Err(Error::DimensionMismatch { expected: n, got: samples.n() });
    }
    if model.fields().iter().any(|&h| h != 0.0) {
        return Err(Error::InvalidModel("gradient term statistics require a zero-field model".into()));
    }
    let (mut sum, mut sq, mut max_abs, mut count) = (0.0, 0.0, 0.0f64, 0usize);
    for t in samples.indices_for(u) {
        let s0 = samples.sigma0(t);
        let s1 = f64::from(samples.new_spin(t));
        let h = model.local_field(u, s0);
        let reg = if k == u { 1.0 } else { f64::from(s0[k]) };
        let x = match term {
            GradientTerm::Screening => -s1 * reg * (-s1 * h).clamp(-EXP_CLAMP, EXP_CLAMP).exp(),
            GradientTerm::PseudoLikelihood => reg * (h.tanh() - s1),
        };
        sum += x;
        sq += x * x;
        max_abs = max_abs.max(x.abs());
        count += 1;
    }
    if count == 0 {
        return Err(Error::NoUpdates { node: u });
    }
    Ok(TermStatistics { mean: sum / count as f64, second_moment: sq / count as f64, max_abs, count })
}

/// Draw `m` fresh `u`-updates and return the statistics of coordinate `k`.
pub fn gradient_term_statistics<R: Rng + ?Sized>(
    model: &IsingModel,
    u: usize,
    k: usize,
    m: usize,
    term: GradientTerm,
    rng: &mut R,
) -> Result<TermStatistics> {
    if model.fields().iter().any(|&h| h != 0.0) {
        return Err(Error::InvalidModel("gradient term statistics require a zero-field model".into()));
    }
    if m == 0 {
        return Err(Error::InvalidConfig("m must be at least 1".into()));
    }
    let samples = sample_node_updates(model, u, m, rng)?;
    term_statistics(model, &samples, u, k, term)
}

/// `(1/m_u) Σ σ_i⁰ σ_j⁰` over the `u`-updates, as a dense `n × n` matrix.
pub fn initial_correlation(samples: &SampleSet, u: usize) -> Result<Vec<Vec<f64>>> {
    let n = samples.n();
    let m_u = samples.count(u);
    if m_u == 0 {
        return Err(Error::NoUpdates { node: u });
    }
    let mut acc = vec![vec![0i64; n]; n];
    for t in samples.indices_for(u) {
        let s = samples.sigma0(t);
        for i in 0..n {
            for j in i..n {
                acc[i][j] += i64::from(s[i] * s[j]);
            }
        }
    }
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = acc[i][j] as f64 / m_u as f64;
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_topology, CouplingPattern, GraphKind, TopologySpec};
    use crate::rng::{stream, Purpose};

    fn lattice(beta: f64) -> IsingModel {
        build_topology(&TopologySpec {
            graph: GraphKind::PeriodicLattice { rows: 3, cols: 3 },
            pattern: CouplingPattern::Ferromagnetic,
            beta_value: beta,
            alpha_value: beta,
            impurity_edges: vec![],
        })
        .unwrap()
    }

    #[test]
    fn screening_terms() {
        let model = lattice(0.4);
        let m = 20_000;
        let mut r = stream(1, Purpose::Samples, &[]);
        let bound = (0.4f64 * 4.0).exp();
        for k in [1, 3, 4, 0] {
            let st = gradient_term_statistics(&model, 0, k, m, GradientTerm::Screening, &mut r).unwrap();
            assert!(st.mean.abs() <= 4.0 * bound / (m as f64).sqrt());
            assert!((st.second_moment - 1.0).abs() <= 5.0 * bound * bound / (m as f64).sqrt());
            assert!(st.max_abs <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn pseudo_likelihood_terms() {
        let model = lattice(0.6);
        let mut r = stream(2, Purpose::Samples, &[]);
        let st = gradient_term_statistics(&model, 2, 5, 20_000, GradientTerm::PseudoLikelihood, &mut r).unwrap();
        assert!(st.max_abs <= 2.0);
        assert!(st.mean.abs() < 4.0 * 2.0 / (20_000f64).sqrt());
    }

    #[test]
    fn nonzero_field_rejected() {
        let model = IsingModel::new(2, [(0, 1, 0.5)], vec![0.1, 0.0]).unwrap();
        let mut r = stream(3, Purpose::Samples, &[]);
        assert!(gradient_term_statistics(&model, 0, 1, 10, GradientTerm::Screening, &mut r).is_err());
    }

    #[test]
    fn correlation_identity() {
        let model = lattice(0.8);
        let mut r = stream(4, Purpose::Samples, &[]);
        let s = sample_node_updates(&model, 4, 20_000, &mut r).unwrap();
        let c = initial_correlation(&s, 4).unwrap();
        let tol = 4.0 / (20_000f64).sqrt();
        for (i, row) in c.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((v - target).abs() <= tol, "({i},{j}) = {v}");
            }
        }
    }
}
