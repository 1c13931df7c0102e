//! Scalar special functions: log-gamma, Beta and regularized incomplete Beta
//! (with inverse), Gauss and confluent hypergeometric series, and Jacobi
//! polynomials.
//!
//! Everything is plain `f64`. Series evaluations return a [`SpecFunResult`]
//! carrying the number of terms used; a series that fails its stopping rule
//! inside the term cap is reported as [`Error::NoConvergence`] rather than
//! handed back as a value.

use std::f64::consts::PI;

use crate::error::{domain, Error, Result};

/// Term cap for the hypergeometric series.
pub const SERIES_TERM_CAP: usize = 100_000;
/// Relative stopping threshold `|t_{k+1} / sum|` for the hypergeometric series.
pub const SERIES_REL_TOL: f64 = 1e-16;

const CF_MAX_ITER: usize = 10_000;
const CF_EPS: f64 = 2.0 * f64::EPSILON;
const CF_TINY: f64 = 1e-300;

const INV_BETA_TOL: f64 = 1e-15;
const INV_BETA_MAX_ITER: usize = 200;

/// Value of a series evaluation plus how it got there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecFunResult {
    pub value: f64,
    pub converged: bool,
    pub terms_used: usize,
}

// Lanczos approximation, g = 607/128, 15 terms (Godfrey's coefficients).
const LANCZOS_G: f64 = 607.0 / 128.0;
const LANCZOS_COEF: [f64; 15] = [
    0.999_999_999_999_997_1,
    57.156_235_665_862_92,
    -59.597_960_355_475_49,
    14.136_097_974_741_747,
    -0.491_913_816_097_620_2,
    0.339_946_499_848_118_9e-4,
    0.465_236_289_270_485_8e-4,
    -0.983_744_753_048_795_6e-4,
    0.158_088_703_224_912_5e-3,
    -0.210_264_441_724_104_9e-3,
    0.217_439_618_115_212_6e-3,
    -0.164_318_106_536_763_9e-3,
    0.844_182_239_838_527_4e-4,
    -0.261_908_384_015_814_1e-4,
    0.368_991_826_595_316_2e-5,
];
const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(domain("ln_gamma", format!("x = {x}")));
    }
    Ok(ln_gamma_pos(x))
}

fn ln_gamma_pos(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection keeps the Lanczos sum in its accurate range.
        return (PI / (PI * x).sin()).ln() - ln_gamma_pos(1.0 - x);
    }
    // Exact small integers: avoids a 1-ulp wobble at the zeros x = 1, 2.
    if x == 1.0 || x == 2.0 {
        return 0.0;
    }
    let z = x - 1.0;
    let mut sum = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        sum += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    HALF_LN_TWO_PI + (z + 0.5) * t.ln() - t + sum.ln()
}

/// `Γ(x)` for `x > 0`, via `exp(ln Γ)`.
pub fn gamma(x: f64) -> Result<f64> {
    ln_gamma(x).map(f64::exp)
}

/// `ln B(a, b)`.
pub fn ln_beta(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(domain("ln_beta", format!("a = {a}, b = {b}")));
    }
    Ok(ln_gamma_pos(a) + ln_gamma_pos(b) - ln_gamma_pos(a + b))
}

/// Complete Beta function `B(a, b)`.
pub fn beta(a: f64, b: f64) -> Result<f64> {
    ln_beta(a, b).map(f64::exp)
}

/// Natural log of the generalized binomial coefficient
/// `Γ(n+1) / (Γ(k+1) Γ(n-k+1))`, all three arguments positive.
pub fn ln_binomial(n: f64, k: f64) -> Result<f64> {
    Ok(ln_gamma(n + 1.0)? - ln_gamma(k + 1.0)? - ln_gamma(n - k + 1.0)?)
}

/// A Beta(a, b) law with its normalizer cached, so repeated CDF and quantile
/// evaluations at fixed shape skip the log-gamma work.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaLaw {
    a: f64,
    b: f64,
    ln_beta: f64,
    /// `I(1/2; a, b)`, which decides the side a quantile lies on.
    mid: f64,
}

impl BetaLaw {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(domain("BetaLaw::new", format!("a = {a}, b = {b}")));
        }
        let mut law = Self {
            a,
            b,
            ln_beta: ln_beta(a, b)?,
            mid: f64::NAN,
        };
        law.mid = law.cdf(0.5)?;
        Ok(law)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Swapped law, `Beta(b, a)`: `I(x; a, b) = 1 - I(1 - x; b, a)`.
    pub fn reflected(&self) -> Self {
        Self {
            a: self.b,
            b: self.a,
            ln_beta: self.ln_beta,
            mid: 1.0 - self.mid,
        }
    }

    /// Regularized incomplete Beta `I(x; a, b)`.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(domain("reg_inc_beta", format!("x = {x}")));
        }
        if x == 0.0 {
            return Ok(0.0);
        }
        if x == 1.0 {
            return Ok(1.0);
        }
        let (a, b) = (self.a, self.b);
        let ln_front = a * x.ln() + b * (-x).ln_1p() - self.ln_beta;
        let front = ln_front.exp();
        if x < (a + 1.0) / (a + b + 2.0) {
            Ok(front * beta_cf(x, a, b)? / a)
        } else {
            Ok(1.0 - front * beta_cf(1.0 - x, b, a)? / b)
        }
    }

    /// Density `x^{a-1} (1-x)^{b-1} / B(a, b)`.
    pub fn pdf(&self, x: f64) -> f64 {
        if x <= 0.0 || x >= 1.0 {
            return 0.0;
        }
        ((self.a - 1.0) * x.ln() + (self.b - 1.0) * (-x).ln_1p() - self.ln_beta).exp()
    }

    /// Inverse of [`BetaLaw::cdf`]: the `x` with `I(x; a, b) = p`.
    ///
    /// Solves on whichever side of `1/2` the root lies, through the reflected
    /// law when it is above, so the iteration always works on a quantity that
    /// is small relative to 1 and keeps its relative precision. Returns 0 when
    /// the root lies below the smallest positive double.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(domain("inv_reg_inc_beta", format!("p = {p}")));
        }
        if p == 0.0 {
            return Ok(0.0);
        }
        if p == 1.0 {
            return Ok(1.0);
        }
        if p <= self.mid {
            self.lower_root(p)
        } else {
            Ok(1.0 - self.reflected().lower_root(1.0 - p)?)
        }
    }

    /// Root of `I(x) = p` known to lie in `(0, 1/2]`.
    fn lower_root(&self, p: f64) -> Result<f64> {
        let (a, b) = (self.a, self.b);
        let mut x = self.initial_guess(p).min(0.5);
        if !(x > 0.0) {
            x = f64::MIN_POSITIVE;
        }
        let (mut lo, mut hi) = (0.0_f64, 0.5_f64);
        for _ in 0..INV_BETA_MAX_ITER {
            let err = self.cdf(x)? - p;
            if err == 0.0 {
                return Ok(x);
            }
            if err < 0.0 {
                lo = x;
            } else {
                hi = x;
                if x <= f64::MIN_POSITIVE {
                    // Root underflows.
                    return Ok(0.0);
                }
            }
            let dens = self.pdf(x);
            let mut next = if dens > 0.0 && dens.is_finite() {
                let newton = err / dens;
                let curv = (a - 1.0) / x - (b - 1.0) / (1.0 - x);
                let halley = newton / (1.0 - 0.5 * (newton * curv).clamp(-1.0, 1.0));
                x - halley
            } else {
                f64::NAN
            };
            if !(next > lo && next < hi) {
                // Bisect in log scale when the bracket spans many decades.
                next = if lo > 0.0 && hi / lo > 4.0 {
                    (lo * hi).sqrt()
                } else if lo == 0.0 {
                    (hi * 1e-3).max(f64::MIN_POSITIVE)
                } else {
                    0.5 * (lo + hi)
                };
            }
            let step = (next - x).abs();
            x = next;
            if step <= INV_BETA_TOL * x || (lo > 0.0 && hi - lo <= INV_BETA_TOL * lo) {
                return Ok(x);
            }
        }
        Err(Error::NoConvergence {
            func: "inv_reg_inc_beta",
            terms: INV_BETA_MAX_ITER,
        })
    }

    fn initial_guess(&self, p: f64) -> f64 {
        let (a, b) = (self.a, self.b);
        let x = if a >= 1.0 && b >= 1.0 {
            let pp = if p < 0.5 { p } else { 1.0 - p };
            let t = (-2.0 * pp.ln()).sqrt();
            let mut z = (2.30753 + t * 0.27061) / (1.0 + t * (0.99229 + t * 0.04481)) - t;
            if p < 0.5 {
                z = -z;
            }
            let al = (z * z - 3.0) / 6.0;
            let h = 2.0 / (1.0 / (2.0 * a - 1.0) + 1.0 / (2.0 * b - 1.0));
            let w = z * (al + h).sqrt() / h
                - (1.0 / (2.0 * b - 1.0) - 1.0 / (2.0 * a - 1.0)) * (al + 5.0 / 6.0 - 2.0 / (3.0 * h));
            a / (a + b * (2.0 * w).exp())
        } else {
            let lna = (a / (a + b)).ln();
            let lnb = (b / (a + b)).ln();
            let t = (a * lna).exp() / a;
            let u = (b * lnb).exp() / b;
            let w = t + u;
            if p < t / w {
                (a * w * p).powf(1.0 / a)
            } else {
                1.0 - (b * w * (1.0 - p)).powf(1.0 / b)
            }
        };
        if x > 0.0 && x < 1.0 {
            x
        } else {
            0.5
        }
    }
}

/// Continued fraction for the incomplete Beta (modified Lentz).
fn beta_cf(x: f64, a: f64, b: f64) -> Result<f64> {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            return Ok(h);
        }
    }
    Err(Error::NoConvergence {
        func: "reg_inc_beta",
        terms: CF_MAX_ITER,
    })
}

/// Regularized incomplete Beta function `I(x; a, b)`.
pub fn reg_inc_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    BetaLaw::new(a, b)?.cdf(x)
}

/// Inverse regularized incomplete Beta: `x` such that `I(x; a, b) = p`.
pub fn inv_reg_inc_beta(p: f64, a: f64, b: f64) -> Result<f64> {
    BetaLaw::new(a, b)?.quantile(p)
}

fn finish_series(func: &'static str, value: f64, terms: usize, converged: bool) -> Result<SpecFunResult> {
    if converged && value.is_finite() {
        Ok(SpecFunResult {
            value,
            converged,
            terms_used: terms,
        })
    } else {
        Err(Error::NoConvergence { func, terms })
    }
}

/// Gauss hypergeometric `₂F₁(a, b; c; z)` by direct summation, `z ∈ [0, 1)`.
pub fn hyp2f1(a: f64, b: f64, c: f64, z: f64) -> Result<SpecFunResult> {
    if !(c > 0.0) || !(0.0..1.0).contains(&z) {
        return Err(domain("hyp2f1", format!("c = {c}, z = {z}")));
    }
    let mut sum = 1.0;
    let mut term = 1.0;
    for k in 0..SERIES_TERM_CAP {
        let kf = k as f64;
        term *= (a + kf) * (b + kf) / ((c + kf) * (kf + 1.0)) * z;
        sum += term;
        if term == 0.0 || (term / sum).abs() < SERIES_REL_TOL {
            return finish_series("hyp2f1", sum, k + 1, true);
        }
    }
    finish_series("hyp2f1", sum, SERIES_TERM_CAP, false)
}

/// Confluent hypergeometric `₁F₁(a; b; z)`. Negative `z` goes through Kummer's
/// transform `e^z ₁F₁(b - a; b; -z)` so the summed series has no alternation.
pub fn hyp1f1(a: f64, b: f64, z: f64) -> Result<SpecFunResult> {
    if !(b > 0.0) || !z.is_finite() {
        return Err(domain("hyp1f1", format!("b = {b}, z = {z}")));
    }
    if z < 0.0 {
        let inner = hyp1f1_series(b - a, b, -z)?;
        return Ok(SpecFunResult {
            value: z.exp() * inner.value,
            ..inner
        });
    }
    hyp1f1_series(a, b, z)
}

fn hyp1f1_series(a: f64, b: f64, z: f64) -> Result<SpecFunResult> {
    let mut sum = 1.0;
    let mut term = 1.0;
    for k in 0..SERIES_TERM_CAP {
        let kf = k as f64;
        let ratio = (a + kf) / ((b + kf) * (kf + 1.0)) * z;
        term *= ratio;
        sum += term;
        // Only trust the relative test once the terms have started shrinking.
        if term == 0.0 || (ratio.abs() < 1.0 && (term / sum).abs() < SERIES_REL_TOL) {
            return finish_series("hyp1f1", sum, k + 1, true);
        }
    }
    finish_series("hyp1f1", sum, SERIES_TERM_CAP, false)
}

/// Jacobi polynomial `P_n^{(a,b)}(x)` by the ascending three-term recurrence.
pub fn jacobi_p(n: usize, a: f64, b: f64, x: f64) -> Result<f64> {
    let mut all = vec![0.0; n + 1];
    jacobi_p_all(a, b, x, &mut all)?;
    Ok(all[n])
}

/// Fills `out[k] = P_k^{(a,b)}(x)` for `k = 0..out.len()`.
pub fn jacobi_p_all(a: f64, b: f64, x: f64, out: &mut [f64]) -> Result<()> {
    if !(a > -1.0 && b > -1.0) || !(-1.0..=1.0).contains(&x) {
        return Err(domain("jacobi_p", format!("a = {a}, b = {b}, x = {x}")));
    }
    let n = out.len();
    if n == 0 {
        return Ok(());
    }
    out[0] = 1.0;
    if n == 1 {
        return Ok(());
    }
    out[1] = (a + 1.0) + 0.5 * (a + b + 2.0) * (x - 1.0);
    let ab = a + b;
    for k in 2..n {
        let kf = k as f64;
        let two_k_ab = 2.0 * kf + ab;
        let denom = 2.0 * kf * (kf + ab) * (two_k_ab - 2.0);
        let c1 = (two_k_ab - 1.0) * (two_k_ab * (two_k_ab - 2.0) * x + a * a - b * b);
        let c2 = 2.0 * (kf + a - 1.0) * (kf + b - 1.0) * two_k_ab;
        out[k] = (c1 * out[k - 1] - c2 * out[k - 2]) / denom;
    }
    Ok(())
}

/// Exact Gauss error function, re-exported for the activation code.
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}
