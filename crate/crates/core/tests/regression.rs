use nalgebra::{DMatrix, DVector};
use rand::Rng;
use residuum::regression::score;
use residuum::stream::stream;
use residuum::{fit, loglik, predictive_laws, DistributionKind, Error, Family, ModelParams, ModelSpec};

fn uniform_design(n: usize, lo: f64, hi: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = stream(seed, &[1]);
    DMatrix::from_fn(n, 2, |_, c| if c == 0 { 1.0 } else { 0.0 }).map_with_location(|_, c, v| {
        if c == 0 {
            v
        } else {
            lo + (hi - lo) * rng.random::<f64>()
        }
    })
}

fn simulate(x: &DMatrix<f64>, beta: &[f64], law: impl Fn(f64) -> DistributionKind, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, &[2]);
    (0..x.nrows())
        .map(|i| {
            let eta: f64 = (0..beta.len()).map(|c| x[(i, c)] * beta[c]).sum();
            law(eta.exp()).sample(&mut rng).unwrap()
        })
        .collect()
}

fn within_3se(est: f64, se: f64, truth: f64) -> bool {
    se > 0.0 && (est - truth).abs() < 3.0 * se
}

#[test]
fn intercept_only_poisson_is_log_mean() {
    let y = [0.0, 3.0, 1.0, 4.0, 2.0, 2.0, 7.0, 1.0];
    let spec = ModelSpec::new(Family::Poisson, DMatrix::from_element(8, 1, 1.0), None).unwrap();
    let m = fit(&spec, &y).unwrap();
    assert!(m.converged);
    assert!((m.beta[0] - (20.0f64 / 8.0).ln()).abs() < 1e-8);
    assert!((m.aic - (-2.0 * m.loglik + 2.0)).abs() == 0.0);
}

#[test]
fn nb_on_poisson_data_loses_its_dispersion() {
    // For an intercept-only NB the score in 1/k at 1/k = 0 has the sign of
    // (ML variance - mean), so underdispersed samples put k on its bound.
    let n = 2000;
    let x = DMatrix::from_element(n, 1, 1.0);
    let mut at_bound = 0;
    for seed in 0..20 {
        let y = simulate(&x, &[1.0], |m| DistributionKind::poisson(m).unwrap(), 1000 + seed);
        let mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let m = fit(&ModelSpec::new(Family::NegBinomial, x.clone(), None).unwrap(), &y).unwrap();
        let k = m.k.unwrap();
        assert!(m.converged);
        assert!(k > 10.0, "seed {seed}: k = {k}");
        if var <= mean {
            assert!(m.k_at_bound && k >= 1e3, "seed {seed}: var {var} mean {mean} k {k}");
            assert!(m.std_errors.dispersion.is_none());
            at_bound += 1;
        }
    }
    assert!(at_bound >= 4);
}

#[test]
fn zip_parameter_recovery() {
    let n = 5000;
    let x = uniform_design(n, -1.0, 2.0, 21);
    let y = simulate(&x, &[1.0, 2.0], |m| DistributionKind::zip(m, 0.3).unwrap(), 21);
    let spec = ModelSpec::new(Family::Zip, x, None).unwrap();
    let m = fit(&spec, &y).unwrap();
    assert!(m.converged);
    let se = &m.std_errors;
    assert!(within_3se(m.beta[0], se.beta[0], 1.0), "{} ± {}", m.beta[0], se.beta[0]);
    assert!(within_3se(m.beta[1], se.beta[1], 2.0), "{} ± {}", m.beta[1], se.beta[1]);
    let g = m.gamma.as_ref().unwrap()[0];
    let gse = se.gamma.as_ref().unwrap()[0];
    assert!(within_3se(g, gse, (0.3f64 / 0.7).ln()), "{g} ± {gse}");
}

#[test]
fn poisson_nb_zinb_parameter_recovery() {
    let n = 5000;
    let x = uniform_design(n, -1.0, 2.0, 31);

    let y = simulate(&x, &[1.0, 2.0], |m| DistributionKind::poisson(m).unwrap(), 31);
    let m = fit(&ModelSpec::new(Family::Poisson, x.clone(), None).unwrap(), &y).unwrap();
    assert!(m.converged);
    for (j, t) in [1.0, 2.0].into_iter().enumerate() {
        assert!(within_3se(m.beta[j], m.std_errors.beta[j], t));
    }

    let y = simulate(&x, &[1.0, 2.0], |m| DistributionKind::neg_binomial(m, 2.0).unwrap(), 32);
    let m = fit(&ModelSpec::new(Family::NegBinomial, x.clone(), None).unwrap(), &y).unwrap();
    assert!(m.converged && !m.k_at_bound);
    for (j, t) in [1.0, 2.0].into_iter().enumerate() {
        assert!(within_3se(m.beta[j], m.std_errors.beta[j], t));
    }
    assert!(within_3se(m.k.unwrap(), m.std_errors.dispersion.unwrap(), 2.0));

    let y = simulate(&x, &[1.0, 2.0], |m| DistributionKind::zinb(m, 2.0, 0.3).unwrap(), 33);
    let m = fit(&ModelSpec::new(Family::Zinb, x, None).unwrap(), &y).unwrap();
    assert!(m.converged && !m.k_at_bound);
    for (j, t) in [1.0, 2.0].into_iter().enumerate() {
        assert!(within_3se(m.beta[j], m.std_errors.beta[j], t), "beta{j} = {}", m.beta[j]);
    }
    assert!(within_3se(m.k.unwrap(), m.std_errors.dispersion.unwrap(), 2.0), "k = {:?}", m.k);
    let g = m.gamma.as_ref().unwrap()[0];
    assert!(within_3se(g, m.std_errors.gamma.as_ref().unwrap()[0], (0.3f64 / 0.7).ln()));
}

#[test]
fn normal_regression_is_least_squares() {
    let x = DMatrix::from_row_slice(5, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 4.0]);
    let y = [1.0, 3.1, 4.9, 7.2, 8.8];
    let m = fit(&ModelSpec::new(Family::Normal, x, None).unwrap(), &y).unwrap();
    // closed-form simple regression
    assert!((m.beta[1] - 1.97).abs() < 1e-12);
    assert!((m.beta[0] - 1.06).abs() < 1e-12);
    assert!(m.sigma.unwrap() > 0.0);
}

fn params_for(spec: &ModelSpec, theta: &[f64]) -> ModelParams {
    let p = spec.mean_design().ncols();
    let q = spec.zero_design().map_or(0, |z| z.ncols());
    ModelParams {
        beta: DVector::from_column_slice(&theta[..p]),
        gamma: (q > 0).then(|| DVector::from_column_slice(&theta[p..p + q])),
        dispersion: spec.family().has_dispersion().then(|| theta[p + q].exp()),
    }
}

#[test]
fn score_matches_central_differences() {
    let n = 60;
    let x = uniform_design(n, -1.0, 1.0, 41);
    let z = uniform_design(n, -1.0, 1.0, 42);
    let mut rng = stream(43, &[]);
    for family in [Family::Poisson, Family::NegBinomial, Family::Zip, Family::Zinb] {
        let zd = family.is_zero_inflated().then(|| z.clone());
        let spec = ModelSpec::new(family, x.clone(), zd).unwrap();
        let y = simulate(&x, &[0.5, 1.0], |m| DistributionKind::zinb(m, 1.5, 0.3).unwrap(), 44);
        for _ in 0..10 {
            let theta: Vec<f64> = (0..spec.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = score(&spec, &params_for(&spec, &theta), &y).unwrap();
            for j in 0..theta.len() {
                let h = 1e-5;
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[j] += h;
                tm[j] -= h;
                let fd = (loglik(&spec, &params_for(&spec, &tp), &y).unwrap()
                    - loglik(&spec, &params_for(&spec, &tm), &y).unwrap())
                    / (2.0 * h);
                assert!(
                    (g[j] - fd).abs() <= 1e-4 * fd.abs().max(1.0),
                    "{family} coordinate {j}: analytic {} vs fd {fd}",
                    g[j]
                );
            }
        }
    }
}

#[test]
fn zero_inflated_models_nest_their_base() {
    let n = 400;
    let x = uniform_design(n, -1.0, 2.0, 51);
    for (seed, p) in [(52, 0.0), (53, 0.3)] {
        let y = simulate(&x, &[0.5, 1.0], |m| DistributionKind::zinb(m, 3.0, p).unwrap(), seed);
        let ll = |f| fit(&ModelSpec::new(f, x.clone(), None).unwrap(), &y).unwrap().loglik;
        assert!(ll(Family::Zip) >= ll(Family::Poisson) - 1e-6);
        assert!(ll(Family::Zinb) >= ll(Family::NegBinomial) - 1e-6);
    }
}

#[test]
fn rescaling_a_covariate_rescales_its_coefficient() {
    let n = 300;
    let x = uniform_design(n, -1.0, 2.0, 61);
    let y = simulate(&x, &[1.0, 0.8], |m| DistributionKind::zinb(m, 2.0, 0.2).unwrap(), 61);
    let c = 3.7;
    let mut xs = x.clone();
    xs.column_mut(1).scale_mut(c);
    for family in [Family::Poisson, Family::NegBinomial, Family::Zip, Family::Zinb] {
        let a = fit(&ModelSpec::new(family, x.clone(), None).unwrap(), &y).unwrap();
        let b = fit(&ModelSpec::new(family, xs.clone(), None).unwrap(), &y).unwrap();
        assert!((a.beta[1] / c - b.beta[1]).abs() < 1e-6, "{family}");
        assert!((a.loglik - b.loglik).abs() < 1e-6, "{family}");
        assert!((a.aic - b.aic).abs() < 1e-6, "{family}");
    }
}

#[test]
fn em_trace_is_nondecreasing() {
    let n = 500;
    let x = uniform_design(n, -1.0, 2.0, 71);
    for (family, seed) in [(Family::Zip, 72), (Family::Zinb, 73)] {
        let y = simulate(&x, &[1.0, 1.0], |m| DistributionKind::zinb(m, 1.0, 0.4).unwrap(), seed);
        let m = fit(&ModelSpec::new(family, x.clone(), Some(x.clone())).unwrap(), &y).unwrap();
        assert!(m.em_trace.len() > 2);
        for w in m.em_trace.windows(2) {
            assert!(w[1] - w[0] >= -1e-8, "{family}: {} -> {}", w[0], w[1]);
        }
        assert!(m.loglik >= *m.em_trace.last().unwrap() - 1e-8);
    }
}

#[test]
fn loglik_matches_distribution_module() {
    let x = uniform_design(25, -1.0, 1.0, 81);
    let y = simulate(&x, &[0.3, 1.0], |m| DistributionKind::zinb(m, 2.0, 0.3).unwrap(), 81);
    let beta = [0.3, 0.9];
    let mu: Vec<f64> = (0..25).map(|i| (beta[0] + beta[1] * x[(i, 1)]).exp()).collect();
    type Law = Box<dyn Fn(f64) -> DistributionKind>;
    let cases: Vec<(Family, Vec<f64>, Law)> = vec![
        (Family::Poisson, vec![], Box::new(|m| DistributionKind::poisson(m).unwrap())),
        (Family::NegBinomial, vec![2.5f64.ln()], Box::new(|m| DistributionKind::neg_binomial(m, 2.5).unwrap())),
        (Family::Zip, vec![-0.5], Box::new(|m| DistributionKind::zip(m, 1.0 / (1.0 + 0.5f64.exp())).unwrap())),
        (
            Family::Zinb,
            vec![-0.5, 2.5f64.ln()],
            Box::new(|m| DistributionKind::zinb(m, 2.5, 1.0 / (1.0 + 0.5f64.exp())).unwrap()),
        ),
    ];
    for (family, extra, law) in cases {
        let spec = ModelSpec::new(family, x.clone(), None).unwrap();
        let theta: Vec<f64> = beta.iter().copied().chain(extra).collect();
        let got = loglik(&spec, &params_for(&spec, &theta), &y).unwrap();
        let want: f64 = (0..25).map(|i| law(mu[i]).pmf(y[i]).unwrap().ln()).sum();
        assert!((got - want).abs() < 1e-10, "{family}: {got} vs {want}");
    }
}

#[test]
fn zip_with_no_inflation_is_poisson() {
    let x = uniform_design(30, 0.0, 1.0, 91);
    let y = simulate(&x, &[0.5, 1.0], |m| DistributionKind::poisson(m).unwrap(), 91);
    let beta = DVector::from_vec(vec![0.4, 1.1]);
    let pois = ModelSpec::new(Family::Poisson, x.clone(), None).unwrap();
    let zip = ModelSpec::new(Family::Zip, x, None).unwrap();
    let a = loglik(&pois, &ModelParams { beta: beta.clone(), gamma: None, dispersion: None }, &y).unwrap();
    let b = loglik(
        &zip,
        &ModelParams { beta, gamma: Some(DVector::from_vec(vec![f64::NEG_INFINITY])), dispersion: None },
        &y,
    )
    .unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn predictive_law_examples() {
    let y = [1.0, 0.0, 2.0, 1.0, 1.0, 0.0, 3.0, 0.0];
    let x = DMatrix::from_element(8, 1, 1.0);
    // sample mean 1 -> beta_hat = 0
    let spec = ModelSpec::new(Family::Poisson, x.clone(), None).unwrap();
    let m = fit(&spec, &y).unwrap();
    for law in predictive_laws(&m, &spec).unwrap() {
        match law.kind() {
            DistributionKind::Poisson { lambda } => assert!((lambda - 1.0).abs() < 1e-10),
            other => panic!("unexpected law {other:?}"),
        }
    }

    let spec = ModelSpec::new(Family::Zip, x, None).unwrap();
    let mut m = fit(&spec, &y).unwrap();
    m.gamma = Some(DVector::from_vec(vec![(0.3f64 / 0.7).ln()]));
    for law in predictive_laws(&m, &spec).unwrap() {
        match law.kind() {
            DistributionKind::Zip { p, .. } => assert!((p - 0.3).abs() < 1e-10),
            other => panic!("unexpected law {other:?}"),
        }
    }

    let x = uniform_design(100, -1.0, 1.0, 101);
    let y = simulate(&x, &[1.0, 0.5], |m| DistributionKind::neg_binomial(m, 3.0).unwrap(), 101);
    let spec = ModelSpec::new(Family::NegBinomial, x.clone(), None).unwrap();
    let m = fit(&spec, &y).unwrap();
    let laws = predictive_laws(&m, &spec).unwrap();
    for i in [0, 17, 99] {
        let hand = (m.beta[0] * x[(i, 0)] + m.beta[1] * x[(i, 1)]).exp();
        assert!((laws[i].mean() - hand).abs() < 1e-12 * hand);
        assert_eq!(laws[i].observation_index(), i);
    }
}

#[test]
fn fit_errors() {
    let x = uniform_design(20, 0.0, 1.0, 111);
    let spec = ModelSpec::new(Family::Zip, x.clone(), None).unwrap();
    assert!(matches!(fit(&spec, &[0.0; 20]), Err(Error::Unidentifiable(_))));
    assert!(matches!(fit(&spec, &[1.5; 20]), Err(Error::Domain(_))));
    assert!(matches!(fit(&spec, &[1.0; 19]), Err(Error::LengthMismatch { .. })));
    let mut dup = DMatrix::zeros(20, 3);
    dup.columns_mut(0, 2).copy_from(&x);
    dup.column_mut(2).copy_from(&x.column(1));
    assert!(matches!(ModelSpec::new(Family::Poisson, dup, None), Err(Error::RankDeficient { rank: 2, columns: 3 })));
}
