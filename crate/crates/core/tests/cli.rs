use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use residuum::cli::{
    command_diagnose, command_fit, command_simulate, qq_points, DiagnoseOptions, ModelInputs, SimulateOptions,
};
use residuum::simlab::{self, ModelForm, Scenario};
use residuum::{Family, ResidualKind};

const BIN: &str = env!("CARGO_BIN_EXE_residuum");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let (header, rows) = read_csv(path);
    let j = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[j].parse().unwrap()).collect()
}

fn coefficient(dir: &Path, part: &str, term: &str) -> (f64, f64) {
    let (_, rows) = read_csv(&dir.join("coefficients.csv"));
    let r = rows.iter().find(|r| r[0] == part && r[1] == term).unwrap();
    (r[2].parse().unwrap(), r[3].parse().unwrap_or(f64::NAN))
}

fn report_value(dir: &Path, key: &str) -> String {
    let (_, rows) = read_csv(&dir.join("report.csv"));
    rows.into_iter().find(|r| r[0] == key).unwrap()[1].clone()
}

/// Writes the simulated data with columns x, x2 and y.
fn write_dataset(d: &simlab::Dataset, path: &Path) {
    let mut w = csv::Writer::from_path(path).unwrap();
    w.write_record(["x", "x2", "y"]).unwrap();
    for (x, y) in d.x.iter().zip(&d.y) {
        w.write_record([x.to_string(), (x * x).to_string(), y.to_string()]).unwrap();
    }
    w.flush().unwrap();
}

fn inputs(data: PathBuf, family: Family, mean: &[&str], zero: &[&str], out: PathBuf) -> ModelInputs {
    ModelInputs {
        data,
        family,
        response: "y".into(),
        mean: mean.iter().map(|s| s.to_string()).collect(),
        zero: zero.iter().map(|s| s.to_string()).collect(),
        seed: 1,
        out,
    }
}

fn residuum(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).env_remove("RESIDUUM_SEED").output().unwrap()
}

#[test]
fn intercept_only_poisson_matches_log_mean() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture("poisson_seed1.csv");
    let out = residuum(&["fit", data.to_str().unwrap(), "--response", "count", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let y = column(&data, "count");
    let want = (y.iter().sum::<f64>() / y.len() as f64).ln();
    let (b0, _) = coefficient(dir.path(), "mean", "(intercept)");
    assert!((b0 - want).abs() < 1e-6, "{b0} vs {want}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("(intercept)"));
}

#[test]
fn zip_recovery_from_simulated_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let d = simlab::generate(Scenario::ZipVsPoisson, 5000, 0.3, 1).unwrap();
    let data = dir.path().join("zip.csv");
    write_dataset(&d, &data);
    let out = dir.path().join("fit");
    let report = command_fit(&inputs(data, Family::Zip, &["x"], &[], out.clone())).unwrap();
    assert!(report.converged);
    for (part, term, truth) in
        [("mean", "(intercept)", 1.0), ("mean", "x", 2.0), ("zero", "(intercept)", (0.3f64 / 0.7).ln())]
    {
        let (est, se) = coefficient(&out, part, term);
        assert!((est - truth).abs() < 3.0 * se, "{part} {term}: {est} +- {se} vs {truth}");
    }
}

#[test]
fn malformed_csv_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "y,x\n1,0.5\n2,0.1\n3,oops\n").unwrap();
    let out = residuum(&["fit", path.to_str().unwrap(), "--response", "y", "--mean-covariates", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"), "{}", String::from_utf8_lossy(&out.stderr));

    fs::write(&path, "y,x\n1,0.5\n2,0.1,7\n").unwrap();
    let out = residuum(&["fit", path.to_str().unwrap(), "--response", "y", "--mean-covariates", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    fs::write(&path, "y,x\n1.5,0.5\n2,0.1\n0,1\n1,2\n").unwrap();
    let out = residuum(&["fit", path.to_str().unwrap(), "--response", "y", "--mean-covariates", "x"]);
    assert_eq!(out.status.code(), Some(2));

    let out = residuum(&["fit", "/nonexistent.csv", "--response", "y"]);
    assert_eq!(out.status.code(), Some(2));
    let out = residuum(&["fit", "--family", "tweedie"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_values_are_dropped_and_counted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("na.csv");
    fs::write(&path, "y,x,unused\n1,0.5,a\n2,NA,b\n0,1.0,\n3,,c\n1,2.0,d\n2,0.3,e\n").unwrap();
    let out = dir.path().join("o");
    let r = command_fit(&inputs(path, Family::Poisson, &["x"], &[], out.clone())).unwrap();
    assert_eq!((r.n_obs, r.dropped_rows), (4, 2));
    assert_eq!(report_value(&out, "dropped_rows"), "2");
}

/// 95th percentile of the max QQ deviation of exact N(0, 1) samples of size
/// `n`, and the fraction of such samples within `fixed`.
fn normal_qq_band(n: usize, fixed: f64) -> (f64, f64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let sims = 4000;
    let mut devs: Vec<f64> = (0..sims)
        .map(|_| {
            let z: Vec<f64> = (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
            qq_points(&z).iter().map(|(t, s)| (t - s).abs()).fold(0.0, f64::max)
        })
        .collect();
    let within = devs.iter().filter(|&&d| d <= fixed).count() as f64 / sims as f64;
    devs.sort_by(f64::total_cmp);
    (devs[sims * 95 / 100], within)
}

#[test]
fn true_model_nrpp_is_bounded_and_normal() {
    let dir = tempfile::tempdir().unwrap();
    let opts = DiagnoseOptions { kinds: vec![ResidualKind::Nrpp], replicates: 0, alpha: 0.05 };
    let (band, fixed_rate) = normal_qq_band(1000, 0.35);
    let (mut sw_ok, mut qq_ok, mut qq_fixed, mut bounded) = (0, 0, 0, 0);
    for seed in 0..100u64 {
        let d = simlab::generate(Scenario::NbQuadratic, 1000, 1.0, seed).unwrap();
        let data = dir.path().join("nb.csv");
        write_dataset(&d, &data);
        let out = dir.path().join("diag");
        let mut inp = inputs(data, Family::NegBinomial, &["x2"], &[], out.clone());
        inp.seed = seed;
        let report = command_diagnose(&inp, &opts).unwrap();
        assert!(report.converged);
        let nrpp = column(&out.join("residuals.csv"), "nrpp");
        bounded += nrpp.iter().all(|v| v.abs() <= 4.5) as usize;
        sw_ok += (report.gof[0].p_value > 0.01) as usize;
        let th = column(&out.join("qq_nrpp.csv"), "theoretical");
        let s = column(&out.join("qq_nrpp.csv"), "sample");
        let dev = th.iter().zip(&s).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        qq_ok += (dev <= band) as usize;
        qq_fixed += (dev <= 0.35) as usize;
    }
    assert!(bounded >= 98, "bounded in {bounded}/100");
    assert!(sw_ok >= 98, "SW p > 0.01 in {sw_ok}/100");
    assert!(qq_ok >= 90, "QQ within the 95% normal band {band:.3} in {qq_ok}/100");
    // a 0.35 band is far narrower than 95% of exact normal samples allow;
    // NRPPs must still behave like normal samples against it
    let slack = 4.0 * (fixed_rate * (1.0 - fixed_rate) / 100.0).sqrt();
    assert!(
        (qq_fixed as f64 / 100.0 - fixed_rate).abs() <= slack,
        "QQ within 0.35 in {qq_fixed}/100, exact normal rate {fixed_rate:.3}"
    );
}

#[test]
fn wrong_poisson_separates_zero_responses() {
    let dir = tempfile::tempdir().unwrap();
    let d = simlab::generate(Scenario::ZipVsPoisson, 1000, 0.3, 42).unwrap();
    let data = dir.path().join("zip.csv");
    write_dataset(&d, &data);
    let out = dir.path().join("diag");
    let opts = DiagnoseOptions { kinds: vec![ResidualKind::Nrpp], replicates: 0, alpha: 0.05 };
    command_diagnose(&inputs(data, Family::Poisson, &["x"], &[], out.clone()), &opts).unwrap();
    let nrpp = column(&out.join("residuals.csv"), "nrpp");
    let fitted = column(&out.join("residuals.csv"), "fitted_value");
    let mut nonzero: Vec<f64> = d.y.iter().zip(&nrpp).filter(|(y, _)| **y > 0.0).map(|(_, r)| *r).collect();
    nonzero.sort_by(f64::total_cmp);
    let p10 = nonzero[nonzero.len() / 10];
    // where the fitted Poisson puts most of its mass off zero, every zero is separated
    let zeros: Vec<(f64, f64)> =
        d.y.iter().zip(fitted.iter().zip(&nrpp)).filter(|(y, _)| **y == 0.0).map(|(_, (f, r))| (*f, *r)).collect();
    let high: Vec<_> = zeros.iter().filter(|(f, _)| *f >= 1.0).collect();
    assert!(high.len() > 100);
    assert!(high.iter().all(|(_, r)| *r < p10), "p10 = {p10}");
    // low-mean zeros are uninformative, but they are a small minority
    let above = zeros.iter().filter(|(_, r)| *r >= p10).count();
    assert!((above as f64) < 0.1 * zeros.len() as f64, "{above} of {}", zeros.len());
}

#[test]
fn diagnose_writes_plot_data_and_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture("poisson_seed1.csv");
    let run = |out: &Path| {
        residuum(&[
            "diagnose",
            data.to_str().unwrap(),
            "--response",
            "count",
            "--mean-covariates",
            "x",
            "--replicates",
            "20",
            "--seed",
            "5",
            "--out",
            out.to_str().unwrap(),
        ])
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&a).status.code(), Some(0));
    assert_eq!(run(&b).status.code(), Some(0));
    let (header, rows) = read_csv(&a.join("residuals.csv"));
    assert_eq!(header, ["index", "fitted_value", "x", "pearson", "deviance", "rpp", "mpp", "nrpp", "nmpp"]);
    assert_eq!(rows.len(), 200);
    for name in ["residuals.csv", "qq_nrpp.csv", "qq_pearson.csv", "gof.csv", "replicated_sw.csv", "report.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    assert!(!a.join("qq_rpp.csv").exists());
    let (_, gof) = read_csv(&a.join("gof.csv"));
    let methods: Vec<_> = gof.iter().map(|r| (r[0].as_str(), r[1].as_str())).collect();
    assert!(methods.contains(&("rpp", "ks-uniform")) && methods.contains(&("nrpp", "shapiro-wilk")));

    // a different seed changes only the randomized columns
    let c = dir.path().join("c");
    let out = residuum(&[
        "diagnose",
        data.to_str().unwrap(),
        "--response",
        "count",
        "--mean-covariates",
        "x",
        "--replicates",
        "0",
        "--seed",
        "6",
        "--out",
        c.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(column(&a.join("residuals.csv"), "pearson"), column(&c.join("residuals.csv"), "pearson"));
    assert_ne!(column(&a.join("residuals.csv"), "nrpp"), column(&c.join("residuals.csv"), "nrpp"));
}

#[test]
fn seed_precedence_flag_config_env() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture("poisson_seed1.csv");
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, format!("data = {:?}\nresponse = \"count\"\nseed = 11\n", data.to_str().unwrap())).unwrap();
    let seed_of = |extra: &[&str], env: Option<&str>| {
        let out = dir.path().join("o");
        let mut cmd = Command::new(BIN);
        cmd.arg("fit").args(extra).arg("--out").arg(&out).env_remove("RESIDUUM_SEED");
        if let Some(v) = env {
            cmd.env("RESIDUUM_SEED", v);
        }
        let o = cmd.output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        report_value(&out, "seed")
    };
    let cfg_s = cfg.to_str().unwrap();
    assert_eq!(seed_of(&["--config", cfg_s, "--seed", "3"], Some("9")), "3");
    assert_eq!(seed_of(&["--config", cfg_s], Some("9")), "11");
    assert_eq!(seed_of(&[data.to_str().unwrap(), "--response", "count"], Some("9")), "9");
    assert_eq!(seed_of(&[data.to_str().unwrap(), "--response", "count"], None), "1");

    fs::write(&cfg, "bogus_key = 1\n").unwrap();
    let o = residuum(&["fit", "--config", cfg_s]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_single_cell_matches_run_cell_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &Path| {
        residuum(&[
            "simulate",
            "--scenario",
            "zipvspoisson",
            "--sizes",
            "100",
            "--levels",
            "0.3",
            "--kinds",
            "nrpp",
            "--replicates",
            "40",
            "--seed",
            "8",
            "--out",
            out.to_str().unwrap(),
        ])
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&a).status.code(), Some(0));
    assert_eq!(run(&b).status.code(), Some(0));
    for name in ["power.csv", "cells.log"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let direct = simlab::run_cell(Scenario::ZipVsPoisson, 100, 0.3, ResidualKind::Nrpp, 40, 8).unwrap();
    let (header, rows) = read_csv(&a.join("power.csv"));
    let form = header.iter().position(|h| h == "model_form").unwrap();
    let rate = header.iter().position(|h| h == "rejection_rate").unwrap();
    let get = |f: ModelForm| -> f64 { rows.iter().find(|r| r[form] == f.name()).unwrap()[rate].parse().unwrap() };
    assert_eq!(get(ModelForm::True).to_bits(), direct.type_i.rejection_rate.to_bits());
    assert_eq!(get(ModelForm::Wrong).to_bits(), direct.power.rejection_rate.to_bits());

    let opts = SimulateOptions {
        scenario: Scenario::FinitePmf,
        sizes: vec![2],
        levels: vec![0.0],
        kinds: vec![ResidualKind::Rpp],
        reps: 10,
        alpha: 0.05,
        seed: 1,
        out: dir.path().join("c"),
    };
    assert!(command_simulate(&opts).is_err());
    let o = residuum(&["simulate", "--scenario", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn aic_respects_nesting() {
    let dir = tempfile::tempdir().unwrap();
    let d = simlab::generate(Scenario::ZipVsPoisson, 800, 0.3, 3).unwrap();
    let data = dir.path().join("zip.csv");
    write_dataset(&d, &data);
    let fit = |family| command_fit(&inputs(data.clone(), family, &["x"], &[], dir.path().join("o"))).unwrap();
    let (p, nb, zip, zinb) = (fit(Family::Poisson), fit(Family::NegBinomial), fit(Family::Zip), fit(Family::Zinb));
    assert!(zip.loglik >= p.loglik && nb.loglik >= p.loglik - 1e-8 && zinb.loglik >= nb.loglik - 1e-8);
    // ZINB reaches ZIP only as k -> infinity; with k capped the gap is O(n mu / k)
    if zinb.k_at_bound {
        assert!(zinb.loglik >= zip.loglik - 1e-2, "{} vs {}", zinb.loglik, zip.loglik);
    } else {
        assert!(zinb.loglik >= zip.loglik - 1e-8);
    }
    for r in [&p, &nb, &zip, &zinb] {
        assert!((r.aic - (-2.0 * r.loglik + 2.0 * r.n_params as f64)).abs() < 1e-9);
    }
    assert!(zip.aic < p.aic);
}
