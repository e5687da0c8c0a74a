use isingdyn::active::{
    active_learn, build_query_distribution, glauber_entropy, query_distribution_from_entropies, ActiveConfig,
    GlauberOracle,
};
use isingdyn::dynamics::{run_m_regime, run_t_regime, transition_probability};
use isingdyn::estimators::objective::{d_iso_value, d_pl_value};
use isingdyn::estimators::{fit_drise, fit_drple, lambda_for_node, SolverMethod};
use isingdyn::experiments::{find_m_star, success_rate, MGrid, MStarSpec};
use isingdyn::model::{config_from_index, exact_distribution, CouplingPattern, GraphKind};
use isingdyn::neural::{
    extract_single_flip_samples, iid_correlations, read_spike_csv, synthetic_raster, time_correlations,
    write_spike_csv, SpikeRaster,
};
use isingdyn::reconstruction::average_couplings;
use isingdyn::rng::{stream, Purpose};
use isingdyn::{
    Estimator, InitialDistribution, IsingModel, NeighborhoodEstimate, Regime, RegularizationConfig, SampleSet,
    SolverConfig, TopologySpec,
};
use proptest::prelude::*;
use rand::Rng;

fn model_strategy(max_n: usize, max_w: f64, fields: bool) -> impl Strategy<Value = IsingModel> {
    (2usize..=max_n).prop_flat_map(move |n| {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let np = pairs.len();
        let h = if fields { 1.0 } else { 0.0 };
        (
            proptest::collection::vec(prop_oneof![Just(0.0), -max_w..max_w], np),
            proptest::collection::vec(-1.0f64..1.0, n),
        )
            .prop_map(move |(ws, hs)| {
                let hs = hs.into_iter().map(|x| x * h).collect();
                IsingModel::new(n, pairs.iter().zip(ws).map(|(&(i, j), w)| (i, j, w)), hs).unwrap()
            })
    })
}

fn samples(model: &IsingModel, m: usize, seed: u64) -> SampleSet {
    run_m_regime(model, &InitialDistribution::Uniform, m, &mut stream(seed, Purpose::Samples, &[])).unwrap()
}

fn estimate(node: usize, couplings: Vec<f64>) -> NeighborhoodEstimate {
    NeighborhoodEstimate {
        node,
        couplings,
        field: 0.0,
        objective_value: 0.0,
        iterations: 0,
        converged: true,
        kkt_residual: 0.0,
        clamp_events: 0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn detailed_balance(model in model_strategy(5, 1.5, true)) {
        let n = model.n();
        let pi = exact_distribution(&model).unwrap();
        for a in 0..1u64 << n {
            let sa = config_from_index(a, n);
            for i in 0..n {
                let b = a ^ (1 << i);
                let sb = config_from_index(b, n);
                let fwd = pi[a as usize] * transition_probability(&model, sa.as_slice(), sb.as_slice()).unwrap();
                let bwd = pi[b as usize] * transition_probability(&model, sb.as_slice(), sa.as_slice()).unwrap();
                prop_assert!((fwd - bwd).abs() <= 1e-12 * fwd.max(bwd));
            }
        }
    }

    #[test]
    fn replay_is_deterministic(model in model_strategy(6, 1.0, true), seed in any::<u64>(), m in 1usize..300) {
        let p0 = InitialDistribution::Uniform;
        let t1 = run_t_regime(&model, &p0, m, &mut stream(seed, Purpose::Samples, &[1])).unwrap();
        let t2 = run_t_regime(&model, &p0, m, &mut stream(seed, Purpose::Samples, &[1])).unwrap();
        prop_assert_eq!(t1, t2);
        let m1 = run_m_regime(&model, &p0, m, &mut stream(seed, Purpose::Samples, &[2])).unwrap();
        let m2 = run_m_regime(&model, &p0, m, &mut stream(seed, Purpose::Samples, &[2])).unwrap();
        prop_assert_eq!(m1, m2);
    }

    #[test]
    fn objectives_are_midpoint_convex(
        model in model_strategy(5, 1.0, true),
        seed in any::<u64>(),
        xs in proptest::collection::vec(-2.0f64..2.0, 10),
        ys in proptest::collection::vec(-2.0f64..2.0, 10),
    ) {
        let s = samples(&model, 400, seed);
        let n = model.n();
        for u in (0..n).filter(|&u| s.count(u) > 0) {
            let (x, y) = (&xs[..n - 1], &ys[..n - 1]);
            let mid: Vec<f64> = x.iter().zip(y).map(|(a, b)| 0.5 * (a + b)).collect();
            let (hx, hy) = (xs[9], ys[9]);
            for f in [d_iso_value, d_pl_value] {
                let fm = f(&s, u, &mid, 0.5 * (hx + hy)).unwrap();
                let avg = 0.5 * (f(&s, u, x, hx).unwrap() + f(&s, u, y, hy).unwrap());
                prop_assert!(fm <= avg + 1e-12 * avg.abs().max(1.0));
            }
        }
    }

    #[test]
    fn averaging_is_symmetric(n in 2usize..7, values in proptest::collection::vec(-2.0f64..2.0, 42)) {
        let ests: Vec<_> = (0..n).map(|u| estimate(u, values[u * 6..u * 6 + n - 1].to_vec())).collect();
        let avg = average_couplings(&ests).unwrap();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                prop_assert_eq!(avg.get(i, j), avg.get(j, i));
                let want = 0.5 * (ests[i].coupling_to(j) + ests[j].coupling_to(i));
                prop_assert!((avg.get(i, j) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn entropy_is_flip_symmetric_without_fields(model in model_strategy(6, 2.0, false), idx in any::<u64>()) {
        let n = model.n();
        let s = config_from_index(idx % (1 << n), n);
        let a = glauber_entropy(&model, s.as_slice()).unwrap();
        let b = glauber_entropy(&model, s.flipped().as_slice()).unwrap();
        prop_assert!((a - b).abs() <= 1e-14 * a.max(1.0));
    }

    #[test]
    fn query_distribution_ignores_entropy_scale(
        raw in proptest::collection::vec(0.0f64..3.0, 16),
        scale in 1e-3f64..1e3,
        mu in 0.0f64..=1.0,
    ) {
        let a = query_distribution_from_entropies(4, &raw, mu).unwrap();
        let scaled: Vec<f64> = raw.iter().map(|s| s * scale).collect();
        let b = query_distribution_from_entropies(4, &scaled, mu).unwrap();
        for (p, q) in a.probs().iter().zip(b.probs()) {
            prop_assert!((p - q).abs() <= 1e-15 * p.max(1e-300) + 1e-18);
        }
        let total: f64 = a.probs().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn extraction_accounts_for_every_pair(
        n in 1usize..6,
        bits in proptest::collection::vec(any::<bool>(), 1..240),
    ) {
        let bins = bits.len() / n;
        prop_assume!(bins >= 1);
        let cols: Vec<Vec<i8>> = (0..bins)
            .map(|t| (0..n).map(|i| if bits[t * n + i] { 1 } else { -1 }).collect())
            .collect();
        let raster = SpikeRaster::from_columns(&cols, 20.0).unwrap();
        let (set, c) = extract_single_flip_samples(&raster);
        prop_assert_eq!(c.pairs, bins - 1);
        prop_assert_eq!(c.extracted + c.no_flip + c.multi_flip, c.pairs);
        prop_assert_eq!(set.len(), c.extracted);
        for t in 0..set.len() {
            let u = set.updated_node(t);
            prop_assert_eq!(set.new_spin(t), -set.sigma0(t)[u]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn solvers_agree_and_certify(model in model_strategy(6, 1.0, true), seed in any::<u64>()) {
        let s = samples(&model, 3000, seed);
        let cd = SolverConfig::default();
        let pg = SolverConfig { method: SolverMethod::ProximalGradient, ..cd };
        for u in (0..model.n()).filter(|&u| s.count(u) > 0) {
            let lambda = lambda_for_node(&RegularizationConfig::new(0.1), &s, u).unwrap();
            let a = fit_drise(&s, u, lambda, &cd).unwrap();
            let b = fit_drise(&s, u, lambda, &pg).unwrap();
            let c = fit_drple(&s, u, lambda, &cd).unwrap();
            prop_assert!((a.objective_value - b.objective_value).abs() <= 1e-6);
            for e in [&a, &b, &c] {
                prop_assert!(e.converged);
                prop_assert!(e.kkt_residual <= cd.tolerance);
            }
        }
    }

    #[test]
    fn fits_commute_with_relabeling(model in model_strategy(5, 1.0, true), seed in any::<u64>(), rot in 1usize..5) {
        let n = model.n();
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let s = samples(&model, 2000, seed);
        let sp = s.permuted(&perm).unwrap();
        let reg = RegularizationConfig::new(0.1);
        let cfg = SolverConfig::default();
        for u in (0..n).filter(|&u| s.count(u) > 0) {
            for est in [Estimator::DRise, Estimator::DRple] {
                let lambda = lambda_for_node(&reg, &s, u).unwrap();
                let a = isingdyn::estimators::fit(est, &s, u, lambda, &cfg).unwrap();
                let b = isingdyn::estimators::fit(est, &sp, perm[u], lambda, &cfg).unwrap();
                for j in (0..n).filter(|&j| j != u) {
                    prop_assert!((a.coupling_to(j) - b.coupling_to(perm[j])).abs() <= 1e-4);
                }
                prop_assert!((a.field - b.field).abs() <= 1e-4);
            }
        }
    }

    #[test]
    fn active_samples_are_valid(m in 30usize..400, i_max in 1usize..5, seed in any::<u64>()) {
        let model = IsingModel::new(4, [(0, 1, 0.8), (1, 2, -0.6), (2, 3, 0.5)], vec![0.1, 0.0, -0.2, 0.0]).unwrap();
        let cfg = ActiveConfig::from_budget(m, i_max, 1.0 / 3.0, RegularizationConfig::new(0.1)).unwrap();
        let mut oracle = GlauberOracle::new(&model, stream(seed, Purpose::Oracle, &[]));
        match active_learn(&mut oracle, &cfg, &mut stream(seed, Purpose::Queries, &[])) {
            Ok(out) => {
                prop_assert_eq!(out.samples.len(), cfg.total());
                prop_assert_eq!(out.samples.regime(), Regime::M);
                prop_assert_eq!(out.rounds.len(), i_max);
                prop_assert_eq!(out.samples.per_node_counts().iter().sum::<usize>(), cfg.total());
                for t in 0..out.samples.len() {
                    let smp = out.samples.sample(t);
                    prop_assert!(smp.validate().is_ok());
                }
                for r in &out.rounds {
                    prop_assert!((0.0..=1.0).contains(&r.mu));
                }
            }
            Err(isingdyn::Error::NoUpdates { .. }) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }
}

#[test]
fn one_step_marginals_match_exact_law() {
    let model = IsingModel::new(3, [(0, 1, 0.7), (1, 2, -0.5), (0, 2, 0.3)], vec![0.2, -0.1, 0.0]).unwrap();
    let m = 1_000_000;
    let s = samples(&model, m, 2024);
    let mut hist = vec![0usize; 8 * 3 * 2];
    for t in 0..m {
        let idx: usize = s.sigma0(t).iter().enumerate().map(|(k, &v)| usize::from(v == 1) << k).sum();
        let up = usize::from(s.new_spin(t) == 1);
        hist[(idx * 3 + s.updated_node(t)) * 2 + up] += 1;
    }
    for idx in 0..8u64 {
        let sigma = config_from_index(idx, 3);
        for u in 0..3 {
            for (up, v) in [(0usize, -1i8), (1, 1)] {
                let p = isingdyn::dynamics::conditional_prob(&model, u, sigma.as_slice(), v).unwrap() / 24.0;
                let expected = p * m as f64;
                let sd = (m as f64 * p * (1.0 - p)).sqrt();
                let got = hist[(idx as usize * 3 + u) * 2 + up] as f64;
                assert!((got - expected).abs() <= 3.0 * sd, "cell ({idx}, {u}, {v}): {got} vs {expected} ± {sd}");
            }
        }
    }
}

#[test]
fn m_star_is_reproducible_and_stable() {
    let spec = MStarSpec {
        topology: TopologySpec {
            graph: GraphKind::RandomRegular { n: 2, degree: 1, seed: 0 },
            pattern: CouplingPattern::Ferromagnetic,
            beta_value: 0.6,
            alpha_value: 0.6,
            impurity_edges: vec![],
        },
        regime: Regime::T,
        estimator: Estimator::DRise,
        reg: RegularizationConfig::new(0.1),
        solver: SolverConfig::default(),
        consecutive_successes: 10,
        m_grid: MGrid { start: Some(20), m_max: 100_000, ..MGrid::default() },
        master_seed: 99,
        burn_in: 0,
    };
    let a = find_m_star(&spec).unwrap();
    assert_eq!(a, find_m_star(&spec).unwrap());
    let m = a.m_star.expect("single edge is learnable");
    assert!(success_rate(&spec, m, 20, 10_000).unwrap() >= 0.8);
}

#[test]
fn iid_and_time_correlations_differ() {
    // Margin fixed before looking at the numbers.
    let model =
        IsingModel::with_zero_field(5, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, -1.0), (3, 4, 1.0), (0, 4, 1.0)]).unwrap();
    let raster = synthetic_raster(&model, 20_000, 4, 20.0, &mut stream(5, Purpose::Fixture, &[])).unwrap();
    let iid = iid_correlations(&raster).unwrap();
    let (set, _) = extract_single_flip_samples(&raster);
    let time = time_correlations(&set).unwrap();
    let diff = isingdyn::neural::frobenius_relative_diff(&iid, &time).unwrap();
    assert!(diff > 0.05, "relative difference {diff}");
}

#[test]
fn query_distribution_from_model_matches_direct_construction() {
    let model = IsingModel::new(3, [(0, 1, 0.9), (1, 2, -0.4)], vec![0.3, 0.0, -0.2]).unwrap();
    let q = build_query_distribution(&model, 0.5).unwrap();
    let ents: Vec<f64> = (0..8).map(|i| glauber_entropy(&model, config_from_index(i, 3).as_slice()).unwrap()).collect();
    let r = query_distribution_from_entropies(3, &ents, 0.5).unwrap();
    for (a, b) in q.probs().iter().zip(r.probs()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn files_round_trip_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let model = IsingModel::new(4, [(0, 1, 0.1 + 0.2), (2, 3, -1.0 / 3.0)], vec![1e-17, 0.0, -0.25, 2.0]).unwrap();

    let p = dir.path().join("model.json");
    model.save(&p).unwrap();
    let first = std::fs::read(&p).unwrap();
    IsingModel::load(&p).unwrap().save(&p).unwrap();
    assert_eq!(first, std::fs::read(&p).unwrap());

    let s = samples(&model, 500, 3);
    let p = dir.path().join("samples.jsonl");
    s.save(&p).unwrap();
    let first = std::fs::read(&p).unwrap();
    let back = SampleSet::load(&p).unwrap();
    assert_eq!(back, s);
    back.save(&p).unwrap();
    assert_eq!(first, std::fs::read(&p).unwrap());

    let raster = synthetic_raster(&model, 50, 3, 20.0, &mut stream(4, Purpose::Fixture, &[])).unwrap();
    let mut a = Vec::new();
    raster.write_csv(&mut a).unwrap();
    let back = SpikeRaster::read_csv(a.as_slice(), 20.0).unwrap();
    assert_eq!(back, raster);
    let mut b = Vec::new();
    back.write_csv(&mut b).unwrap();
    assert_eq!(a, b);

    let mut rng = stream(6, Purpose::Fixture, &[]);
    let times: Vec<Vec<f64>> =
        (0..3).map(|_| (0..20).map(|k| k as f64 * 50.0 + rng.gen_range(0.0..50.0)).collect()).collect();
    let mut a = Vec::new();
    write_spike_csv(&times, &mut a).unwrap();
    let back = read_spike_csv(a.as_slice(), Some(3)).unwrap();
    assert_eq!(back, times);
    let mut b = Vec::new();
    write_spike_csv(&back, &mut b).unwrap();
    assert_eq!(a, b);
}
