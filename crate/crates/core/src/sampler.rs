//! Single-step random quantities of the fractional walk, in the frame
//! centered at the current ball.
//!
//! Inside the ball `B_r(x)` the killed α-stable process contributes a source
//! term `ω_r f(y) W(γ)` at a point `y = x + γ u` with `P(γ <= t) = (t/r)^α`,
//! and then leaves the ball at distance `J` with
//! `P(J <= t) = 1 - I(r²/t²; α/2, 1 - α/2)`.

use rand::Rng;
use rand_distr::{Distribution, Open01, StandardNormal};

use crate::error::{domain, Result};
use crate::specfun::{gamma, BetaLaw};

/// Fills `out` with a direction uniform on the unit sphere.
pub fn fill_direction<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    loop {
        let mut n2 = 0.0;
        for v in out.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v = z;
            n2 += z * z;
        }
        if n2 > 0.0 {
            let inv = 1.0 / n2.sqrt();
            for v in out.iter_mut() {
                *v *= inv;
            }
            return;
        }
    }
}

pub fn sample_direction<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(domain("sample_direction", "d must be at least 1"));
    }
    let mut out = vec![0.0; d];
    fill_direction(rng, &mut out);
    Ok(out)
}

fn check_alpha(func: &'static str, alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(domain(func, format!("alpha = {alpha} outside (0, 2)")));
    }
    Ok(())
}

fn check_unit_open(func: &'static str, xi: f64) -> Result<()> {
    if !(xi > 0.0 && xi < 1.0) {
        return Err(domain(func, format!("xi = {xi} outside (0, 1)")));
    }
    Ok(())
}

/// Per-(d, α) constants of the walk. Build once per problem; every per-step
/// method is then free of special-function setup cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpLaw {
    dim: usize,
    alpha: f64,
    /// `Beta(α/2, 1 - α/2)`: law of `(r/J)²`.
    exit: BetaLaw,
    /// `Beta(α/2, (d-α)/2)`, so that `W = I(1 - γ²/r²; α/2, (d-α)/2)`.
    kernel: BetaLaw,
    omega_unit: f64,
}

impl JumpLaw {
    pub fn new(dim: usize, alpha: f64) -> Result<Self> {
        check_alpha("JumpLaw::new", alpha)?;
        if !(dim as f64 > alpha) {
            return Err(domain("JumpLaw::new", format!("need d > alpha, got d = {dim}, alpha = {alpha}")));
        }
        let half = 0.5 * alpha;
        let kernel = BetaLaw::new(half, 0.5 * (dim as f64 - alpha))?;
        let g = gamma(half)?;
        let omega_unit = crate::specfun::beta(0.5 * (dim as f64 - alpha), half)?
            / (alpha * 2f64.powf(alpha - 1.0) * g * g);
        Ok(Self {
            dim,
            alpha,
            exit: BetaLaw::new(half, 1.0 - half)?,
            kernel,
            omega_unit,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `ω_r = r^α B((d-α)/2, α/2) / (α 2^{α-1} Γ(α/2)²)`.
    #[inline]
    pub fn omega(&self, r: f64) -> f64 {
        self.omega_unit * r.powf(self.alpha)
    }

    /// `W = 1 - I(γ²/r²; (d-α)/2, α/2)`, evaluated through the reflected law
    /// so that small values near `γ = r` keep their relative precision.
    #[inline]
    pub fn kernel(&self, gamma: f64, r: f64) -> Result<f64> {
        let one_minus = ((r - gamma) * (r + gamma) / (r * r)).clamp(0.0, 1.0);
        self.kernel.cdf(one_minus)
    }

    /// `(q, 1 - q)` for `q = (r/J)² = I^{-1}(1 - ξ; α/2, 1 - α/2)`, each
    /// to full relative precision.
    #[inline]
    pub fn exit_ratio(&self, xi: f64) -> Result<(f64, f64)> {
        exit_ratio_with(&self.exit, xi)
    }

    /// `J = r / sqrt(I^{-1}(1 - ξ; α/2, 1 - α/2))`.
    #[inline]
    pub fn jump_distance(&self, r: f64, xi: f64) -> Result<f64> {
        Ok(jump_from_ratio(r, self.exit_ratio(xi)?.0))
    }

    /// `γ = ξ^{1/α} r`.
    #[inline]
    pub fn source_radius(&self, r: f64, xi: f64) -> f64 {
        xi.powf(1.0 / self.alpha) * r
    }

    /// One step from `center`: source point first, then the exit point, each
    /// with its own uniform and its own direction.
    pub fn step<R: Rng + ?Sized>(&self, center: &[f64], r: f64, rng: &mut R) -> Result<StepSample> {
        let d = center.len();
        let xi_g: f64 = Open01.sample(rng);
        let gamma = self.source_radius(r, xi_g);
        let mut source_point = vec![0.0; d];
        fill_direction(rng, &mut source_point);
        for (y, c) in source_point.iter_mut().zip(center) {
            *y = c + gamma * *y;
        }
        let xi_j: f64 = Open01.sample(rng);
        let jump = self.jump_distance(r, xi_j)?;
        let mut next_center = vec![0.0; d];
        fill_direction(rng, &mut next_center);
        for (x, c) in next_center.iter_mut().zip(center) {
            *x = c + jump * *x;
        }
        Ok(StepSample {
            next_center,
            source_point,
            jump_length: jump,
            source_radius: gamma,
            ball_radius: r,
        })
    }
}

fn exit_ratio_with(exit: &BetaLaw, xi: f64) -> Result<(f64, f64)> {
    // I(q; a, b) = 1 - ξ  <=>  I(1 - q; b, a) = ξ
    if xi <= 0.5 {
        let delta = exit.reflected().quantile(xi)?;
        Ok((1.0 - delta, delta))
    } else {
        let q = exit.quantile(1.0 - xi)?;
        Ok((q, 1.0 - q))
    }
}

/// `r / sqrt(q)`, rounded up past `r` when `q` is within an ulp of 1.
#[inline]
fn jump_from_ratio(r: f64, q: f64) -> f64 {
    let j = r / q.max(f64::MIN_POSITIVE).sqrt();
    if j > r {
        j
    } else {
        r.next_up()
    }
}

/// Result of [`make_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepSample {
    pub next_center: Vec<f64>,
    pub source_point: Vec<f64>,
    pub jump_length: f64,
    pub source_radius: f64,
    pub ball_radius: f64,
}

pub fn jump_distance(r: f64, alpha: f64, xi: f64) -> Result<f64> {
    check_alpha("jump_distance", alpha)?;
    check_unit_open("jump_distance", xi)?;
    if !(r > 0.0) {
        return Err(domain("jump_distance", format!("r = {r}")));
    }
    let (q, _) = exit_ratio_with(&BetaLaw::new(0.5 * alpha, 1.0 - 0.5 * alpha)?, xi)?;
    Ok(jump_from_ratio(r, q))
}

pub fn source_radius(r: f64, alpha: f64, xi: f64) -> Result<f64> {
    check_alpha("source_radius", alpha)?;
    check_unit_open("source_radius", xi)?;
    if !(r > 0.0) {
        return Err(domain("source_radius", format!("r = {r}")));
    }
    Ok(xi.powf(1.0 / alpha) * r)
}

pub fn weight_omega(r: f64, d: usize, alpha: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(domain("weight_omega", format!("r = {r}")));
    }
    Ok(JumpLaw::new(d, alpha)?.omega(r))
}

pub fn kernel_w(gamma: f64, r: f64, d: usize, alpha: f64) -> Result<f64> {
    if !(r > 0.0) || !(0.0..=r).contains(&gamma) {
        return Err(domain("kernel_w", format!("gamma = {gamma}, r = {r}")));
    }
    JumpLaw::new(d, alpha)?.kernel(gamma, r)
}

pub fn make_step<R: Rng + ?Sized>(center: &[f64], r: f64, alpha: f64, rng: &mut R) -> Result<StepSample> {
    if !(r > 0.0) {
        return Err(domain("make_step", format!("r = {r}")));
    }
    let law = JumpLaw::new(center.len(), alpha)?;
    law.step(center, r, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use crate::specfun::reg_inc_beta;

    #[test]
    fn direction_is_unit() {
        let mut rng = Stream::new(1).rng();
        for d in [1, 2, 3, 10, 1000] {
            for _ in 0..100 {
                let u = sample_direction(d, &mut rng).unwrap();
                let n: f64 = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
        assert!(sample_direction(0, &mut rng).is_err());
    }

    #[test]
    fn direction_one_dim_is_fair_coin() {
        let mut rng = Stream::new(2).rng();
        let n = 100_000;
        let pos = (0..n)
            .filter(|_| sample_direction(1, &mut rng).unwrap()[0] > 0.0)
            .count();
        // 4 sigma of Binomial(n, 1/2).
        assert!((pos as f64 - n as f64 / 2.0).abs() < 4.0 * (n as f64 / 4.0).sqrt());
    }

    #[test]
    fn jump_distance_values() {
        let j = jump_distance(1.0, 1.0, 0.5).unwrap();
        assert!((j - 2f64.sqrt()).abs() < 1e-10);
        let tiny = jump_distance(1.0, 1.2, 1e-12).unwrap();
        assert!(tiny > 1.0 && tiny < 1.0 + 1e-6);
        assert!(jump_distance(1.0, 1.0, 0.0).is_err());
        assert!(jump_distance(1.0, 2.0, 0.5).is_err());
    }

    #[test]
    fn jump_distance_is_linear_in_r() {
        let mut rng = Stream::new(4).rng();
        for _ in 0..200 {
            let alpha = 0.05 + 1.9 * rng.random::<f64>();
            let xi: f64 = Open01.sample(&mut rng);
            let a = jump_distance(1.7, alpha, xi).unwrap();
            let b = jump_distance(3.4, alpha, xi).unwrap();
            assert!((b - 2.0 * a).abs() <= 1e-14 * b);
        }
    }

    #[test]
    fn source_radius_values() {
        assert_eq!(source_radius(1.0, 1.0, 0.5).unwrap(), 0.5);
        assert!((source_radius(2.0, 0.5, 0.25).unwrap() - 0.125).abs() < 1e-15);
        assert!(source_radius(1.0, 1.3, 1.0 - 1e-15).unwrap() < 1.0);
    }

    #[test]
    fn omega_values() {
        assert!((weight_omega(1.0, 2, 1.0).unwrap() - 1.0).abs() < 1e-14);
        assert!((weight_omega(2.0, 2, 1.0).unwrap() - 2.0).abs() < 1e-14);
        let expect = 2.0 / std::f64::consts::PI;
        assert!((weight_omega(1.0, 3, 1.0).unwrap() - expect).abs() < 1e-14);
        assert!(weight_omega(1.0, 1, 1.5).is_err());
    }

    #[test]
    fn kernel_endpoints_and_monotone() {
        assert_eq!(kernel_w(0.0, 1.0, 3, 1.2).unwrap(), 1.0);
        assert_eq!(kernel_w(1.0, 1.0, 3, 1.2).unwrap(), 0.0);
        let mut prev = 1.0;
        for i in 1..=100 {
            let w = kernel_w(i as f64 / 100.0, 1.0, 5, 0.7).unwrap();
            assert!(w <= prev);
            prev = w;
        }
    }

    #[test]
    fn kernel_matches_unreflected_form() {
        let mut rng = Stream::new(8).rng();
        for _ in 0..500 {
            let d = 2 + (rng.random::<u32>() % 9) as usize;
            let alpha = 0.05 + 1.9 * rng.random::<f64>();
            let r = 0.1 + 3.0 * rng.random::<f64>();
            let g = r * rng.random::<f64>();
            let direct = 1.0 - reg_inc_beta(g * g / (r * r), 0.5 * (d as f64 - alpha), 0.5 * alpha).unwrap();
            let w = kernel_w(g, r, d, alpha).unwrap();
            assert!((w - direct).abs() < 1e-13, "{w} vs {direct}");
        }
    }

    #[test]
    fn step_invariants() {
        let mut rng = Stream::new(5).rng();
        let c = [0.3, -0.2, 0.1];
        for k in 0..20_000 {
            let alpha = [0.4, 1.2, 1.9][k % 3];
            let s = make_step(&c, 0.7, alpha, &mut rng).unwrap();
            let dj: f64 = s.next_center.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let dy: f64 = s.source_point.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(s.jump_length > s.ball_radius);
            assert!(s.source_radius < s.ball_radius);
            assert!((dj - s.jump_length).abs() <= 1e-12 * s.jump_length.max(1.0));
            assert!((dy - s.source_radius).abs() <= 1e-12);
        }
    }
}
