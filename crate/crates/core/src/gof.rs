//! Shapiro-Wilk and Kolmogorov-Smirnov tests, and replicated Shapiro-Wilk
//! over independent RPP randomizations.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rayon::prelude::*;

use crate::distributions::PredictiveLaw;
use crate::error::{Error, Result};
use crate::residuals::{normal_transform, rpp};
use crate::special::{std_normal_quantile, std_normal_sf};

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub method: &'static str,
}

pub const SW_MAX_N: usize = 5000;

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

/// Shapiro-Wilk W test using Royston's (1995) AS R94 algorithm.
pub fn shapiro_wilk(x: &[f64]) -> Result<TestResult> {
    const SMALL: f64 = 1e-19;
    const G: [f64; 2] = [-2.273, 0.459];
    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
    const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
    const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
    const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];

    let n = x.len();
    if !(3..=SW_MAX_N).contains(&n) {
        return Err(Error::InvalidParameter(format!("Shapiro-Wilk needs 3 <= n <= {SW_MAX_N}, got {n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("Shapiro-Wilk input contains non-finite values".into()));
    }
    let mut x = x.to_vec();
    x.sort_by(f64::total_cmp);
    let range = x[n - 1] - x[0];
    if range < SMALL {
        return Err(Error::Domain("Shapiro-Wilk input is constant".into()));
    }

    // coefficients a[1..=n/2]; a[0] unused
    let nn2 = n / 2;
    let an = n as f64;
    let mut a = vec![0.0; nn2 + 1];
    if n == 3 {
        a[1] = FRAC_1_SQRT_2;
    } else {
        let an25 = an + 0.25;
        let m: Vec<f64> = (0..=nn2)
            .map(|i| if i == 0 { 0.0 } else { std_normal_quantile((i as f64 - 0.375) / an25).unwrap() })
            .collect();
        let summ2 = 2.0 * m[1..].iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / an.sqrt();
        let a1 = poly(&C1, rsn) - m[1] / ssumm2;
        let (i1, fac) = if n > 5 {
            let a2 = -m[2] / ssumm2 + poly(&C2, rsn);
            a[2] = a2;
            (3, ((summ2 - 2.0 * m[1] * m[1] - 2.0 * m[2] * m[2]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2)).sqrt())
        } else {
            (2, ((summ2 - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1)).sqrt())
        };
        a[1] = a1;
        for i in i1..=nn2 {
            a[i] = -m[i] / fac;
        }
    }

    // W as the squared correlation between the data and the coefficients
    let coef = |i: usize| -> f64 {
        let j = n - 1 - i;
        match i.cmp(&j) {
            std::cmp::Ordering::Less => -a[1 + i],
            std::cmp::Ordering::Greater => a[1 + j],
            std::cmp::Ordering::Equal => 0.0,
        }
    };
    let sa = (0..n).map(coef).sum::<f64>() / an;
    let sx = x.iter().map(|v| v / range).sum::<f64>() / an;
    let (mut ssa, mut ssx, mut sax) = (0.0, 0.0, 0.0);
    for (i, xi) in x.iter().enumerate() {
        let asa = coef(i) - sa;
        let xsx = xi / range - sx;
        ssa += asa * asa;
        ssx += xsx * xsx;
        sax += asa * xsx;
    }
    let ssassx = (ssa * ssx).sqrt();
    let w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx);
    let w = 1.0 - w1;

    let p_value = if n == 3 {
        const PI6: f64 = 6.0 / PI;
        const STQR: f64 = PI / 3.0;
        (PI6 * (w.sqrt().asin() - STQR)).clamp(0.0, 1.0)
    } else {
        let mut y = w1.ln();
        let (m, s) = if n <= 11 {
            let gamma = poly(&G, an);
            if y >= gamma {
                return Ok(TestResult { statistic: w, p_value: 1e-99, n, method: "shapiro-wilk" });
            }
            y = -(gamma - y).ln();
            (poly(&C3, an), poly(&C4, an).exp())
        } else {
            let lx = an.ln();
            (poly(&C5, lx), poly(&C6, lx).exp())
        };
        std_normal_sf((y - m) / s)
    };
    Ok(TestResult { statistic: w, p_value, n, method: "shapiro-wilk" })
}

/// Survival function of the limiting Kolmogorov distribution.
pub fn kolmogorov_sf(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if t < 1.0 {
        // theta-function form converges fast for small t
        let c = -PI * PI / (8.0 * t * t);
        let s: f64 = (1..=20).map(|k| ((2 * k - 1) as f64).powi(2)).map(|j| (c * j).exp()).sum();
        return (1.0 - (2.0 * PI).sqrt() / t * s).clamp(0.0, 1.0);
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * t * t).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-300 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test against Uniform(0, 1), with the
/// asymptotic p-value (optimistic for n below about 35).
pub fn ks_uniform(u: &[f64]) -> Result<TestResult> {
    let n = u.len();
    if n == 0 {
        return Err(Error::InvalidParameter("KS test needs a nonempty sample".into()));
    }
    if let Some(bad) = u.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("KS-uniform input {bad} outside [0, 1]")));
    }
    let mut s = u.to_vec();
    s.sort_by(f64::total_cmp);
    let nf = n as f64;
    let d = s.iter().enumerate().map(|(i, &v)| ((i + 1) as f64 / nf - v).max(v - i as f64 / nf)).fold(0.0, f64::max);
    Ok(TestResult { statistic: d, p_value: kolmogorov_sf(nf.sqrt() * d), n, method: "ks-uniform" })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicatedSw {
    /// SW p-value of replicate r at index r.
    pub p_values: Vec<f64>,
    pub threshold: f64,
    /// Fraction of p-values strictly above `threshold`.
    pub fraction_above: f64,
}

/// Shapiro-Wilk p-values of `replicates` independent NRPP sets of the same
/// data. Replicates run in parallel; the output does not depend on scheduling.
pub fn replicated_sw(
    laws: &[PredictiveLaw],
    y: &[f64],
    replicates: usize,
    master_seed: u64,
    threshold: f64,
) -> Result<ReplicatedSw> {
    if replicates == 0 {
        return Err(Error::InvalidParameter("need at least one replicate".into()));
    }
    let p_values = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let nrpp = normal_transform(&rpp(laws, y, master_seed, r)?)?;
            Ok(shapiro_wilk(&nrpp.values)?.p_value)
        })
        .collect::<Result<Vec<f64>>>()?;
    let above = p_values.iter().filter(|&&p| p > threshold).count();
    Ok(ReplicatedSw { fraction_above: above as f64 / replicates as f64, p_values, threshold })
}
