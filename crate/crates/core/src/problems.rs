//! Benchmark problems with closed-form data and reference solutions.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::specfun::{gamma, hyp1f1, hyp2f1, jacobi_p_all, ln_binomial, ln_gamma};
use crate::walker::{Problem, ScalarFn};

pub const DEFAULT_N_MAX: usize = 60;
pub const DEFAULT_L_MAX: usize = 61;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkKind {
    /// Unit ball, `u = (1 - |x|²)_+^{1 + α/2}`, zero boundary data.
    BallPoly,
    /// Unit disk, source is the indicator of the right half, zero boundary data.
    DiskIndicator,
    /// `(0, 1)^d` with `u = g = d (1 + |x|²)^{-3/2}`.
    CubeRational,
    /// Composite domain with `u = g = exp(-|x|²)`.
    GaussianIrregular,
    /// Zero source and constant boundary value; exact solution is the constant.
    Constant,
}

/// Which benchmark to build and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkId {
    pub kind: BenchmarkKind,
    pub dim: usize,
    pub alpha: f64,
    /// Series truncation for the disk problem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_max: Option<usize>,
    /// Domain override (irregular and constant problems only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Domain>,
    /// Boundary value of the constant problem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

impl BenchmarkId {
    pub fn new(kind: BenchmarkKind, dim: usize, alpha: f64) -> Self {
        Self {
            kind,
            dim,
            alpha,
            n_max: None,
            l_max: None,
            domain: None,
            value: None,
        }
    }

    pub fn ball_poly(dim: usize, alpha: f64) -> Self {
        Self::new(BenchmarkKind::BallPoly, dim, alpha)
    }

    pub fn disk_indicator(alpha: f64) -> Self {
        Self::new(BenchmarkKind::DiskIndicator, 2, alpha)
    }

    pub fn cube_rational(dim: usize, alpha: f64) -> Self {
        Self::new(BenchmarkKind::CubeRational, dim, alpha)
    }

    pub fn gaussian_irregular(dim: usize, alpha: f64) -> Self {
        Self::new(BenchmarkKind::GaussianIrregular, dim, alpha)
    }

    pub fn constant(dim: usize, alpha: f64, value: f64) -> Self {
        Self {
            value: Some(value),
            ..Self::new(BenchmarkKind::Constant, dim, alpha)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 2), got {}", self.alpha)));
        }
        if !(self.dim as f64 > self.alpha) {
            return Err(Error::Config(format!("need dim > alpha, got dim = {}", self.dim)));
        }
        let k = self.kind;
        if k == BenchmarkKind::DiskIndicator && self.dim != 2 {
            return Err(Error::Config("disk_indicator is two-dimensional".into()));
        }
        if k != BenchmarkKind::DiskIndicator && (self.n_max.is_some() || self.l_max.is_some()) {
            return Err(Error::Config("n_max / l_max only apply to disk_indicator".into()));
        }
        if let Some(l) = self.l_max {
            if l == 0 {
                return Err(Error::Config("l_max must be at least 1".into()));
            }
        }
        if self.domain.is_some() && !matches!(k, BenchmarkKind::GaussianIrregular | BenchmarkKind::Constant) {
            return Err(Error::Config("domain override only applies to gaussian_irregular and constant".into()));
        }
        if let Some(d) = &self.domain {
            if d.dim() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, got: d.dim() });
            }
        }
        match (k, self.value) {
            (BenchmarkKind::Constant, None) => Err(Error::Config("constant problem needs a value".into())),
            (BenchmarkKind::Constant, Some(_)) | (_, None) => Ok(()),
            (_, Some(_)) => Err(Error::Config("value only applies to the constant problem".into())),
        }
    }
}

/// `Γ(a) / Γ(b)` without overflow for large arguments.
fn gamma_ratio(a: f64, b: f64) -> Result<f64> {
    Ok((ln_gamma(a)? - ln_gamma(b)?).exp())
}

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn wrap(f: impl Fn(&[f64]) -> Result<f64> + Send + Sync + 'static) -> ScalarFn {
    Arc::new(f)
}

pub fn make_problem(bench: &BenchmarkId) -> Result<Problem> {
    bench.validate()?;
    let d = bench.dim;
    let df = d as f64;
    let alpha = bench.alpha;
    match bench.kind {
        BenchmarkKind::BallPoly => {
            let c = 2f64.powf(alpha) * gamma(0.5 * alpha + 2.0)? * gamma_ratio(0.5 * (alpha + df), 0.5 * df)?;
            let k = 1.0 + alpha / df;
            let p = 1.0 + 0.5 * alpha;
            let u = wrap(move |x| Ok((1.0 - norm_sq(x)).max(0.0).powf(p)));
            Problem::new(
                alpha,
                Domain::unit_ball(d)?,
                wrap(move |x| Ok(c * (1.0 - k * norm_sq(x)))),
                wrap(|_| Ok(0.0)),
                Some(u),
            )
        }
        BenchmarkKind::DiskIndicator => {
            let series = Arc::new(DiskSeries::new(
                alpha,
                bench.n_max.unwrap_or(DEFAULT_N_MAX),
                bench.l_max.unwrap_or(DEFAULT_L_MAX),
            )?);
            let u = wrap(move |x| {
                let r = x[0].hypot(x[1]);
                series.eval(r, x[1].atan2(x[0]))
            });
            Problem::new(
                alpha,
                Domain::unit_ball(2)?,
                wrap(|x| Ok(if x[0] > 0.0 { 1.0 } else { 0.0 })),
                wrap(|_| Ok(0.0)),
                Some(u),
            )
        }
        BenchmarkKind::CubeRational => {
            let c = df * 2f64.powf(alpha) * gamma_ratio(0.5 * (alpha + df), 0.5 * df)? * gamma(0.5 * (alpha + 3.0))?
                / gamma(1.5)?;
            let a = 0.5 * (alpha + 3.0);
            let b = -0.5 * alpha;
            let cc = 0.5 * df;
            let f = wrap(move |x| {
                let s = norm_sq(x);
                let z = s / (1.0 + s);
                Ok(c * (1.0 + s).powf(-a) * hyp2f1(a, b, cc, z)?.value)
            });
            let u = wrap(move |x| Ok(df * (1.0 + norm_sq(x)).powf(-1.5)));
            Problem::new(alpha, Domain::unit_cube(d)?, f, u.clone(), Some(u))
        }
        BenchmarkKind::GaussianIrregular => {
            let c = 2f64.powf(alpha) * gamma_ratio(0.5 * (alpha + df), 0.5 * df)?;
            let a = 0.5 * (alpha + df);
            let b = 0.5 * df;
            let f = wrap(move |x| Ok(c * hyp1f1(a, b, -norm_sq(x))?.value));
            let u = wrap(|x| Ok((-norm_sq(x)).exp()));
            let domain = match &bench.domain {
                Some(dom) => dom.clone(),
                None => Domain::blob(d)?,
            };
            Problem::new(alpha, domain, f, u.clone(), Some(u))
        }
        BenchmarkKind::Constant => {
            let v = bench.value.expect("validated");
            let domain = match &bench.domain {
                Some(dom) => dom.clone(),
                None => Domain::unit_ball(d)?,
            };
            let g = wrap(move |_| Ok(v));
            Ok(Problem::new(alpha, domain, wrap(|_| Ok(0.0)), g.clone(), Some(g))?.with_zero_source())
        }
    }
}

/// Truncated double series for the half-disk indicator source, with the
/// `(ℓ, n)` coefficients precomputed for a fixed `α`.
#[derive(Debug, Clone)]
pub struct DiskSeries {
    alpha: f64,
    n_max: usize,
    /// `coef[j][n]` belongs to `ℓ = 2j + 1`.
    coef: Vec<Vec<f64>>,
    front: f64,
}

impl DiskSeries {
    pub fn new(alpha: f64, n_max: usize, l_max: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 2), got {alpha}")));
        }
        let h = 0.5 * alpha;
        let mut coef = Vec::new();
        for l in (1..=l_max).step_by(2) {
            let lf = l as f64;
            let mut row = Vec::with_capacity(n_max + 1);
            for n in 0..=n_max {
                let nf = n as f64;
                let sign = if (l.div_ceil(2) + n + 1) % 2 == 0 { 1.0 } else { -1.0 };
                let ln_den = ln_binomial(nf + h + 0.5 * lf + 1.0, nf + 0.5 * lf)? + ln_binomial(h + nf, nf)?;
                let scale = (2.0 * nf + h + lf + 1.0) / (PI * (nf + 0.5 * lf) * (h + 1.0));
                row.push(sign * scale * (-ln_den).exp());
            }
            coef.push(row);
        }
        let g = gamma(1.0 + h)?;
        Ok(Self {
            alpha,
            n_max,
            coef,
            front: 2f64.powf(-alpha) / (g * g),
        })
    }

    /// `u(r, θ)` in polar coordinates.
    pub fn eval(&self, r: f64, theta: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(crate::error::domain("exact_disk_series", format!("r = {r}")));
        }
        if r >= 1.0 {
            return Ok(0.0);
        }
        let h = 0.5 * self.alpha;
        let z = 2.0 * r * r - 1.0;
        let mut p = vec![0.0; self.n_max + 1];
        let mut total = 0.5;
        let mut r_pow = r;
        for (j, row) in self.coef.iter().enumerate() {
            let lf = (2 * j + 1) as f64;
            jacobi_p_all(h, lf, z, &mut p)?;
            let inner: f64 = row.iter().zip(&p).map(|(c, pn)| c * pn).sum();
            total += (lf * theta).cos() * r_pow * inner;
            r_pow *= r * r;
        }
        Ok(self.front * (1.0 - r * r).powf(h) * total)
    }
}

/// One-shot evaluation of the disk reference solution.
pub fn exact_disk_series(r: f64, theta: f64, alpha: f64, n_max: usize, l_max: usize) -> Result<f64> {
    DiskSeries::new(alpha, n_max, l_max)?.eval(r, theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_values() {
        for (d, a) in [(2, 0.3), (10, 1.2), (50, 1.9)] {
            let p = make_problem(&BenchmarkId::ball_poly(d, a)).unwrap();
            assert_eq!(p.exact(&vec![0.0; d]).unwrap(), 1.0);
        }
        let p = make_problem(&BenchmarkId::cube_rational(10, 0.4)).unwrap();
        assert_eq!(p.exact(&[0.0; 10]).unwrap(), 10.0);
        let p = make_problem(&BenchmarkId::gaussian_irregular(3, 0.8)).unwrap();
        assert_eq!(p.exact(&[0.0; 3]).unwrap(), 1.0);
    }

    #[test]
    fn ball_poly_source_at_origin() {
        let p = make_problem(&BenchmarkId::ball_poly(2, 1.0)).unwrap();
        let f0 = p.source(&[0.0, 0.0]).unwrap();
        assert!((f0 - 3.0 * PI / 4.0).abs() < 1e-13);
    }

    #[test]
    fn inadmissible_parameters() {
        assert!(make_problem(&BenchmarkId::ball_poly(1, 1.5)).is_err());
        assert!(make_problem(&BenchmarkId::ball_poly(3, 2.0)).is_err());
        let mut disk = BenchmarkId::disk_indicator(0.5);
        disk.dim = 3;
        assert!(make_problem(&disk).is_err());
        let mut c = BenchmarkId::constant(2, 1.0, 1.0);
        c.value = None;
        assert!(make_problem(&c).is_err());
    }

    #[test]
    fn disk_series_at_origin_is_half_of_full_disk() {
        // Symmetry: the two half-disk sources add up to the unit source, whose
        // solution is (1 - r²)^{α/2} / (2^α Γ(1 + α/2)²) in two dimensions.
        for alpha in [0.5, 1.5] {
            let g = gamma(1.0 + 0.5 * alpha).unwrap();
            let full = 2f64.powf(-alpha) / (g * g);
            let half = exact_disk_series(0.0, 0.0, alpha, 60, 61).unwrap();
            assert!((half - 0.5 * full).abs() < 1e-15);
        }
    }

    #[test]
    fn disk_series_boundary_and_symmetry() {
        let s = DiskSeries::new(1.5, 60, 61).unwrap();
        assert_eq!(s.eval(1.0, 0.4).unwrap(), 0.0);
        for (r, t) in [(0.3, 0.2), (0.7, 1.1), (0.95, 2.5)] {
            assert_eq!(s.eval(r, t).unwrap(), s.eval(r, -t).unwrap());
        }
    }

    #[test]
    fn disk_series_reference_values() {
        // Partial sums at this truncation computed in 30-digit arithmetic.
        let s = exact_disk_series(0.5, 0.3, 1.5, 60, 61).unwrap();
        assert!((s - 0.264_792_191_476_470_6).abs() < 1e-12, "{s}");
        let s = exact_disk_series(0.5, 0.3, 0.5, 60, 61).unwrap();
        assert!((s - 0.716_153_458_057_131_1).abs() < 1e-12, "{s}");
        let s = exact_disk_series(0.5, 0.3, 1.5, 40, 41).unwrap();
        assert!((s - 0.264_794_895_014_830_9).abs() < 1e-12, "{s}");
    }

    #[test]
    fn disk_series_opposite_halves_sum_to_full_disk() {
        let alpha = 1.5;
        let g = gamma(1.0 + 0.5 * alpha).unwrap();
        let s = DiskSeries::new(alpha, 60, 61).unwrap();
        for r in [0.2f64, 0.5, 0.8] {
            let full = 2f64.powf(-alpha) * (1.0 - r * r).powf(0.5 * alpha) / (g * g);
            let sum = s.eval(r, 0.3).unwrap() + s.eval(r, PI - 0.3).unwrap();
            assert!((sum - full).abs() < 1e-4 * full, "r = {r}: {sum} vs {full}");
        }
    }

    #[test]
    fn data_finite_in_high_dimension() {
        let p = make_problem(&BenchmarkId::cube_rational(1000, 0.4)).unwrap();
        let mut rng = crate::rng::Stream::new(1).rng();
        let pts = p.domain().sample_interior(20, &mut rng).unwrap();
        for x in pts.rows() {
            let x = x.as_slice().unwrap();
            assert!(p.source(x).unwrap().is_finite());
            assert!(p.boundary(x).unwrap().is_finite());
        }
        assert!(p.source(&vec![1.0; 1000]).unwrap().is_finite());
    }

    #[test]
    fn constant_problem_wiring() {
        let p = make_problem(&BenchmarkId::constant(3, 0.9, 2.5)).unwrap();
        assert_eq!(p.source(&[0.1, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(p.boundary(&[5.0, 0.0, 0.0]).unwrap(), 2.5);
    }

    #[test]
    fn bench_id_serde() {
        let b = BenchmarkId {
            n_max: Some(40),
            ..BenchmarkId::disk_indicator(0.5)
        };
        let s = serde_json::to_string(&b).unwrap();
        assert_eq!(serde_json::from_str::<BenchmarkId>(&s).unwrap(), b);
    }
}
