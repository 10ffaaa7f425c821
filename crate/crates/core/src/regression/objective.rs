//! Log-likelihoods of the supported families with analytic gradients and
//! Hessians.
//!
//! Each observation contributes a local log-likelihood in at most three
//! scalar slots: the mean linear predictor `eta`, the zero-inflation linear
//! predictor `zeta`, and the log dispersion `alpha` (ln k, or ln sigma for
//! the normal case). Local derivatives are chained through the design
//! matrices in [`assemble`].

use nalgebra::{DMatrix, DVector};

use crate::special::{digamma, ln_beta_unchecked, ln_factorial, log_add_exp, logistic, softplus, trigamma};

pub(crate) const ETA: usize = 0;
pub(crate) const ZETA: usize = 1;
pub(crate) const ALPHA: usize = 2;

/// Count (or continuous) component the likelihood is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Base {
    Poisson,
    NegBinomial,
    Normal,
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Local {
    pub ll: f64,
    pub d: [f64; 3],
    pub h: [[f64; 3]; 3],
}

impl Local {
    fn scaled(mut self, w: f64) -> Self {
        self.ll *= w;
        for i in 0..3 {
            self.d[i] *= w;
            for j in 0..3 {
                self.h[i][j] *= w;
            }
        }
        self
    }
}

#[derive(Debug, Clone, Copy)]
struct CountTerms {
    ll: f64,
    d_eta: f64,
    d_alpha: f64,
    h_ee: f64,
    h_ea: f64,
    h_aa: f64,
}

/// ψ(y + k) - ψ(k) and ψ'(y + k) - ψ'(k) for a nonnegative integer y.
fn digamma_differences(y: f64, k: f64) -> (f64, f64) {
    if y <= 1000.0 {
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        let mut j = 0.0;
        while j < y {
            let t = 1.0 / (k + j);
            d1 += t;
            d2 -= t * t;
            j += 1.0;
        }
        (d1, d2)
    } else {
        let d1 = digamma(y + k).unwrap_or(f64::NAN) - digamma(k).unwrap_or(f64::NAN);
        let d2 = trigamma(y + k).unwrap_or(f64::NAN) - trigamma(k).unwrap_or(f64::NAN);
        (d1, d2)
    }
}

fn count_terms(base: Base, y: f64, eta: f64, alpha: f64, derivs: bool) -> CountTerms {
    match base {
        Base::Poisson => {
            let mu = eta.exp();
            let ll = if y == 0.0 { -mu } else { y * eta - mu - ln_factorial(y) };
            CountTerms { ll, d_eta: y - mu, d_alpha: 0.0, h_ee: -mu, h_ea: 0.0, h_aa: 0.0 }
        }
        Base::NegBinomial => {
            let mu = eta.exp();
            let k = alpha.exp();
            let log1p_ratio = (mu / k).ln_1p();
            let km = k + mu;
            let mut ll = -k * log1p_ratio;
            if y > 0.0 {
                ll += -ln_beta_unchecked(y, k) - y.ln() + y * (eta - km.ln());
            }
            if !derivs {
                return CountTerms { ll, d_eta: 0.0, d_alpha: 0.0, h_ee: 0.0, h_ea: 0.0, h_aa: 0.0 };
            }
            let (d1, d2) = digamma_differences(y, k);
            let c_k = d1 - log1p_ratio + (mu - y) / km;
            let c_kk = d2 + mu / (k * km) - (mu - y) / (km * km);
            CountTerms {
                ll,
                d_eta: k * (y - mu) / km,
                d_alpha: k * c_k,
                h_ee: -k * mu * (k + y) / (km * km),
                h_ea: k * mu * (y - mu) / (km * km),
                h_aa: k * c_k + k * k * c_kk,
            }
        }
        Base::Normal => {
            let s2 = (2.0 * alpha).exp();
            let r = y - eta;
            let q = r * r / s2;
            CountTerms {
                ll: -0.5 * (2.0 * std::f64::consts::PI).ln() - alpha - 0.5 * q,
                d_eta: r / s2,
                d_alpha: q - 1.0,
                h_ee: -1.0 / s2,
                h_ea: -2.0 * r / s2,
                h_aa: -2.0 * q,
            }
        }
    }
}

/// Local log-likelihood of a plain count/normal observation.
pub(crate) fn count_local(base: Base, y: f64, eta: f64, alpha: f64, derivs: bool) -> Local {
    let c = count_terms(base, y, eta, alpha, derivs);
    let mut l = Local { ll: c.ll, ..Local::default() };
    if derivs {
        l.d[ETA] = c.d_eta;
        l.d[ALPHA] = c.d_alpha;
        l.h[ETA][ETA] = c.h_ee;
        l.h[ETA][ALPHA] = c.h_ea;
        l.h[ALPHA][ETA] = c.h_ea;
        l.h[ALPHA][ALPHA] = c.h_aa;
    }
    l
}

/// Local log-likelihood of a zero-inflated observation with
/// p = logistic(zeta).
pub(crate) fn zero_inflated_local(base: Base, y: f64, eta: f64, zeta: f64, alpha: f64, derivs: bool) -> Local {
    let c = count_terms(base, y, eta, alpha, derivs);
    let p = logistic(zeta);
    let mut l = Local::default();
    if y > 0.0 {
        l.ll = c.ll - softplus(zeta);
        if derivs {
            l.d = [c.d_eta, -p, c.d_alpha];
            l.h[ETA][ETA] = c.h_ee;
            l.h[ETA][ALPHA] = c.h_ea;
            l.h[ALPHA][ETA] = c.h_ea;
            l.h[ALPHA][ALPHA] = c.h_aa;
            l.h[ZETA][ZETA] = -p * (1.0 - p);
        }
        return l;
    }
    // ln(p + (1-p) f0) = ln(e^zeta + f0) - ln(1 + e^zeta)
    l.ll = log_add_exp(zeta, c.ll) - softplus(zeta);
    if derivs {
        // posterior probability the zero is structural
        let w = logistic(zeta - c.ll);
        let v = w * (1.0 - w);
        let m = 1.0 - w;
        l.d = [m * c.d_eta, w - p, m * c.d_alpha];
        l.h[ZETA][ZETA] = v - p * (1.0 - p);
        l.h[ZETA][ETA] = -v * c.d_eta;
        l.h[ZETA][ALPHA] = -v * c.d_alpha;
        l.h[ETA][ETA] = v * c.d_eta * c.d_eta + m * c.h_ee;
        l.h[ETA][ALPHA] = v * c.d_eta * c.d_alpha + m * c.h_ea;
        l.h[ALPHA][ALPHA] = v * c.d_alpha * c.d_alpha + m * c.h_aa;
        l.h[ETA][ZETA] = l.h[ZETA][ETA];
        l.h[ALPHA][ZETA] = l.h[ZETA][ALPHA];
        l.h[ALPHA][ETA] = l.h[ETA][ALPHA];
    }
    l
}

/// Local log-likelihood of a weighted Bernoulli observation with fractional
/// response `w`: w ln p + (1 - w) ln(1 - p), p = logistic(zeta).
pub(crate) fn logistic_local(w: f64, zeta: f64) -> Local {
    let p = logistic(zeta);
    let mut l = Local { ll: w * zeta - softplus(zeta), ..Local::default() };
    l.d[ZETA] = w - p;
    l.h[ZETA][ZETA] = -p * (1.0 - p);
    l
}

pub(crate) fn weighted(local: Local, w: f64) -> Local {
    local.scaled(w)
}

#[derive(Debug, Clone)]
pub(crate) struct Eval {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

/// Which slots carry parameters, and their designs. Parameter order is
/// [mean coefficients][zero coefficients][alpha].
pub(crate) struct Slots<'a> {
    pub mean: Option<&'a DMatrix<f64>>,
    pub zero: Option<&'a DMatrix<f64>>,
    pub alpha: bool,
}

impl Slots<'_> {
    pub fn dim(&self) -> usize {
        self.mean.map_or(0, |m| m.ncols()) + self.zero.map_or(0, |z| z.ncols()) + usize::from(self.alpha)
    }
}

/// Chain per-observation local derivatives through the design matrices.
pub(crate) fn assemble(slots: &Slots<'_>, locals: &[Local]) -> Eval {
    let n = locals.len();
    let value: f64 = locals.iter().map(|l| l.ll).sum();
    let ones = DMatrix::from_element(n, 1, 1.0);
    let mut blocks: Vec<(usize, &DMatrix<f64>)> = Vec::new();
    if let Some(x) = slots.mean {
        blocks.push((ETA, x));
    }
    if let Some(z) = slots.zero {
        blocks.push((ZETA, z));
    }
    if slots.alpha {
        blocks.push((ALPHA, &ones));
    }
    let dim = slots.dim();
    let mut grad = DVector::zeros(dim);
    let mut hess = DMatrix::zeros(dim, dim);
    let mut offsets = Vec::with_capacity(blocks.len());
    let mut off = 0;
    for (_, d) in &blocks {
        offsets.push(off);
        off += d.ncols();
    }
    for (bi, &(si, di)) in blocks.iter().enumerate() {
        let dv = DVector::from_iterator(n, locals.iter().map(|l| l.d[si]));
        let g = di.tr_mul(&dv);
        grad.rows_mut(offsets[bi], di.ncols()).copy_from(&g);
        for (bj, &(sj, dj)) in blocks.iter().enumerate().skip(bi) {
            let mut scaled = dj.clone();
            for (r, l) in locals.iter().enumerate() {
                let w = l.h[si][sj];
                for c in 0..scaled.ncols() {
                    scaled[(r, c)] *= w;
                }
            }
            let block = di.tr_mul(&scaled);
            hess.view_mut((offsets[bi], offsets[bj]), (di.ncols(), dj.ncols())).copy_from(&block);
            if bi != bj {
                hess.view_mut((offsets[bj], offsets[bi]), (dj.ncols(), di.ncols())).copy_from(&block.transpose());
            }
        }
    }
    Eval { value, grad, hess }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(f: impl Fn(f64, f64, f64) -> Local, at: [f64; 3], slots: &[usize]) {
        let h = 1e-5;
        let base = f(at[0], at[1], at[2]);
        for &i in slots {
            let mut up = at;
            let mut dn = at;
            up[i] += h;
            dn[i] -= h;
            let lu = f(up[0], up[1], up[2]);
            let ld = f(dn[0], dn[1], dn[2]);
            let fd = (lu.ll - ld.ll) / (2.0 * h);
            assert!((fd - base.d[i]).abs() <= 1e-4 * (1.0 + fd.abs()), "grad slot {i}: fd {fd} vs {}", base.d[i]);
            for &j in slots {
                let fdh = (lu.d[j] - ld.d[j]) / (2.0 * h);
                assert!(
                    (fdh - base.h[i][j]).abs() <= 1e-4 * (1.0 + fdh.abs()),
                    "hess ({i},{j}): fd {fdh} vs {}",
                    base.h[i][j]
                );
            }
        }
    }

    #[test]
    fn local_derivatives_match_finite_differences() {
        for &y in &[0.0, 1.0, 4.0, 17.0] {
            for &at in &[[0.3, -0.4, 0.7], [1.5, 0.8, -0.5], [-0.7, -2.0, 2.0]] {
                fd_check(|e, _, a| count_local(Base::Poisson, y, e, a, true), at, &[ETA]);
                fd_check(|e, _, a| count_local(Base::NegBinomial, y, e, a, true), at, &[ETA, ALPHA]);
                fd_check(|e, _, a| count_local(Base::Normal, y, e, a, true), at, &[ETA, ALPHA]);
                fd_check(|e, z, a| zero_inflated_local(Base::Poisson, y, e, z, a, true), at, &[ETA, ZETA]);
                fd_check(|e, z, a| zero_inflated_local(Base::NegBinomial, y, e, z, a, true), at, &[ETA, ZETA, ALPHA]);
                fd_check(|_, z, _| logistic_local(0.3, z), at, &[ZETA]);
            }
        }
    }

    #[test]
    fn large_count_uses_digamma_route() {
        let (a1, a2) = digamma_differences(1000.0, 2.5);
        let b1 = digamma(1002.5).unwrap() - digamma(2.5).unwrap();
        let b2 = trigamma(1002.5).unwrap() - trigamma(2.5).unwrap();
        assert!((a1 - b1).abs() < 1e-11);
        assert!((a2 - b2).abs() < 1e-11);
    }
}
