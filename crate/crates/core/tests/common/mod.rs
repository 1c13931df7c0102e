#![allow(dead_code)]

/// One-sample Kolmogorov-Smirnov statistic of `xs` against `cdf`.
pub fn ks_statistic(xs: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    d
}

/// Asymptotic p-value for a KS statistic `d` at sample size `n`
/// (Stephens' small-sample correction).
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

pub fn ks_pvalue_of(xs: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = xs.len();
    ks_pvalue(ks_statistic(xs, cdf), n)
}

/// Double-exponential quadrature of `f` over `[a, b]`. Tolerates integrable
/// endpoint singularities.
pub fn tanh_sinh(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    tanh_sinh_ends(|da, _| f(a + da), a, b)
}

/// As [`tanh_sinh`], but `f` receives the distances `(x - a, b - x)`, exact
/// even where `x` itself rounds onto an endpoint.
pub fn tanh_sinh_ends(f: impl Fn(f64, f64) -> f64, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let pi2 = std::f64::consts::FRAC_PI_2;
    // Sum over nodes t = k h, |t| <= 6.5, using distances to the endpoints so
    // that nodes crowding an endpoint keep their precision.
    let eval = |h: f64, start: i64, step: i64| -> f64 {
        let mut s = 0.0;
        let kmax = (6.5 / h) as i64;
        let mut k = start;
        while k <= kmax {
            let t = k as f64 * h;
            let u = pi2 * t.sinh();
            let w = pi2 * t.cosh() / u.cosh().powi(2);
            // 1 - tanh(u) without cancellation.
            let comp = 2.0 / (1.0 + (2.0 * u).exp());
            let dx = half * comp;
            for (da, db, keep) in [(2.0 * half - dx, dx, true), (dx, 2.0 * half - dx, k != 0)] {
                if keep && da > 0.0 && db > 0.0 {
                    let v = f(da, db);
                    if v.is_finite() {
                        s += w * v;
                    }
                }
            }
            k += step;
        }
        s
    };
    let mut h = 0.5;
    let mut sum = eval(h, 0, 1);
    let mut est = half * h * sum;
    for _ in 0..10 {
        h *= 0.5;
        sum += eval(h, 1, 2);
        let next = half * h * sum;
        if (next - est).abs() <= 1e-15 * next.abs() {
            return next;
        }
        est = next;
    }
    est
}
