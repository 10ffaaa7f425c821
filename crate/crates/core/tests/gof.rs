use rand::Rng;
use rand_distr::StandardNormal;
use residuum::gof::{kolmogorov_sf, ks_uniform, replicated_sw, shapiro_wilk};
use residuum::special::std_normal_quantile;
use residuum::stream::stream;
use residuum::{fit, predictive_laws, DistributionKind, Family, ModelSpec, PredictiveLaw};

// reference values from scipy.stats.shapiro, which wraps the same AS R94 code
const SW_CASES: &[(&[f64], f64, f64)] = &[
    (&[1.0, 2.0, 4.0], 0.9642857142857142, 0.6368868450289689),
    (&[1.0, 2.0, 4.0, 7.5], 0.9332233125787972, 0.6134707971310199),
    (&[0.3, -1.2, 0.8, 2.1, -0.4, 0.05, 1.7, -2.2, 0.9, -0.1, 0.6], 0.9742481797739613, 0.9258978838084378),
    (
        &[
            0.00123, 0.298746, -0.274138, -0.890592, -0.454671, -0.991647, 0.060144, 1.340215, -0.492207, -0.620475,
            0.489842, 0.356887, 0.105414, -0.930468, -0.029252, 0.695303, -1.344215, -0.457616, -1.901223, -1.289538,
        ],
        0.9921231778323484,
        0.9996440430491582,
    ),
];

#[test]
fn shapiro_wilk_matches_reference_implementation() {
    for (x, w, p) in SW_CASES {
        let r = shapiro_wilk(x).unwrap();
        assert!((r.statistic - w).abs() < 1e-6, "n = {}: W {} vs {w}", x.len(), r.statistic);
        assert!((r.p_value - p).abs() < 1e-5, "n = {}: p {} vs {p}", x.len(), r.p_value);
        assert_eq!(r.n, x.len());
    }
    let grid: Vec<f64> = (1..=50).map(f64::from).collect();
    let r = shapiro_wilk(&grid).unwrap();
    assert!((r.statistic - 0.9555826875589973).abs() < 1e-6);
    assert!((r.p_value - 0.058091862177350316).abs() < 1e-5);
    assert!(r.statistic < 1.0);
}

#[test]
fn shapiro_wilk_near_perfect_normal_sample() {
    let n = 50;
    let x: Vec<f64> = (1..=n).map(|i| std_normal_quantile((i as f64 - 0.375) / (n as f64 + 0.25)).unwrap()).collect();
    let r = shapiro_wilk(&x).unwrap();
    assert!(r.p_value > 0.9);
    assert!((r.statistic - 0.9984740698028733).abs() < 1e-6);
}

#[test]
fn shapiro_wilk_domain() {
    assert!(shapiro_wilk(&[1.0, 2.0]).is_err());
    assert!(shapiro_wilk(&[1.0; 10]).is_err());
    assert!(shapiro_wilk(&vec![0.5; 5001]).is_err());
    assert!(shapiro_wilk(&[1.0, f64::NAN, 2.0]).is_err());
}

#[test]
fn shapiro_wilk_p_values_are_uniform_under_normality() {
    let pvals: Vec<f64> = (0..100)
        .map(|s| {
            let mut rng = stream(500 + s, &[]);
            let x: Vec<f64> = (0..200).map(|_| rng.sample(StandardNormal)).collect();
            shapiro_wilk(&x).unwrap().p_value
        })
        .collect();
    assert!(ks_uniform(&pvals).unwrap().p_value > 0.01);
}

#[test]
fn ks_uniform_examples() {
    let grid: Vec<f64> = (1..=100).map(|i| (i as f64 - 0.5) / 100.0).collect();
    let r = ks_uniform(&grid).unwrap();
    assert!((r.statistic - 0.005).abs() < 1e-12);
    assert!(r.p_value > 0.999_999);

    let r = ks_uniform(&[0.5; 100]).unwrap();
    assert!((r.statistic - 0.5).abs() < 1e-12);
    assert!(r.p_value < 1e-10);

    assert!(ks_uniform(&[]).is_err());
    assert!(ks_uniform(&[0.2, 1.5]).is_err());
}

#[test]
fn ks_uniform_is_order_invariant() {
    let mut rng = stream(7, &[]);
    let mut u: Vec<f64> = (0..300).map(|_| rng.random::<f64>().powf(1.2)).collect();
    let a = ks_uniform(&u).unwrap();
    u.sort_by(f64::total_cmp);
    let b = ks_uniform(&u).unwrap();
    u.reverse();
    let c = ks_uniform(&u).unwrap();
    assert_eq!(a, b);
    assert_eq!(b, c);
}

#[test]
fn kolmogorov_sf_is_monotone() {
    let mut last = 1.0;
    for i in 1..400 {
        let v = kolmogorov_sf(i as f64 * 0.01);
        assert!(v <= last + 1e-15 && (0.0..=1.0).contains(&v));
        last = v;
    }
}

fn laws_for(kinds: impl Iterator<Item = DistributionKind>) -> Vec<PredictiveLaw> {
    kinds.enumerate().map(|(i, k)| PredictiveLaw::new(k, i).unwrap()).collect()
}

#[test]
fn replicated_sw_single_replicate_and_order() {
    let laws = laws_for((0..300).map(|i| DistributionKind::poisson(1.0 + (i % 7) as f64).unwrap()));
    let y = residuum::distributions::sample_responses(&laws, 3).unwrap();
    let one = replicated_sw(&laws, &y, 1, 99, 0.05).unwrap();
    let nrpp = residuum::residuals::normal_transform(&residuum::residuals::rpp(&laws, &y, 99, 0).unwrap()).unwrap();
    assert_eq!(one.p_values, vec![shapiro_wilk(&nrpp.values).unwrap().p_value]);

    let many = replicated_sw(&laws, &y, 40, 99, 0.05).unwrap();
    assert_eq!(many.p_values[0], one.p_values[0]);
    // sequential recomputation of replicate 17 gives the same value
    let nrpp = residuum::residuals::normal_transform(&residuum::residuals::rpp(&laws, &y, 99, 17).unwrap()).unwrap();
    assert_eq!(many.p_values[17], shapiro_wilk(&nrpp.values).unwrap().p_value);
    assert!(replicated_sw(&laws, &y, 0, 99, 0.05).is_err());
}

#[test]
fn replicated_sw_separates_good_and_bad_fits() {
    let n = 1000;
    let mut rng = stream(2024, &[1]);
    let x = nalgebra::DMatrix::from_fn(n, 2, |_, c| if c == 0 { 1.0 } else { rng.random_range(-1.0f64..2.0) });
    let mut rng = stream(2024, &[2]);
    let nb_y: Vec<f64> = (0..n)
        .map(|i| DistributionKind::neg_binomial((1.0 + 2.0 * x[(i, 1)]).exp(), 2.0).unwrap().sample(&mut rng).unwrap())
        .collect();
    let spec = ModelSpec::new(Family::NegBinomial, x.clone(), None).unwrap();
    let laws = predictive_laws(&fit(&spec, &nb_y).unwrap(), &spec).unwrap();
    let good = replicated_sw(&laws, &nb_y, 100, 5, 0.05).unwrap();
    assert!(good.fraction_above >= 0.9, "{}", good.fraction_above);

    let zip_y: Vec<f64> = (0..n)
        .map(|i| DistributionKind::zip((1.0 + 2.0 * x[(i, 1)]).exp(), 0.3).unwrap().sample(&mut rng).unwrap())
        .collect();
    let spec = ModelSpec::new(Family::Poisson, x, None).unwrap();
    let laws = predictive_laws(&fit(&spec, &zip_y).unwrap(), &spec).unwrap();
    let bad = replicated_sw(&laws, &zip_y, 100, 5, 0.05).unwrap();
    assert!(bad.fraction_above <= 0.05, "{}", bad.fraction_above);
}
