//! Fractional walk-on-spheres trajectories and the Monte Carlo estimators
//! built on them.
//!
//! Estimators split their trajectories into fixed chunks, each with its own
//! keyed stream, and combine chunk sums with a pairwise tree in index order.
//! The result is therefore the same for any number of worker threads.

use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Open01};
use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::geometry::Domain;
use crate::rng::Stream;
use crate::sampler::{fill_direction, JumpLaw};

/// Scalar field on `R^d`.
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> Result<f64> + Send + Sync>;

/// Trajectories per deterministic chunk.
pub const CHUNK: usize = 64;

/// `(-Δ)^{α/2} u = f` in the domain, `u = g` outside.
#[derive(Clone)]
pub struct Problem {
    alpha: f64,
    domain: Domain,
    law: JumpLaw,
    f: ScalarFn,
    g: ScalarFn,
    exact: Option<ScalarFn>,
    /// Set when `f` is identically zero so walks can skip source work.
    source_free: bool,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("alpha", &self.alpha)
            .field("domain", &self.domain)
            .field("has_exact", &self.exact.is_some())
            .finish()
    }
}

impl Problem {
    pub fn new(alpha: f64, domain: Domain, f: ScalarFn, g: ScalarFn, exact: Option<ScalarFn>) -> Result<Self> {
        let law = JumpLaw::new(domain.dim(), alpha)?;
        Ok(Self {
            alpha,
            domain,
            law,
            f,
            g,
            exact,
            source_free: false,
        })
    }

    /// Marks the source as identically zero. The walk still draws every
    /// random number, so streams stay aligned with the general path.
    pub fn with_zero_source(mut self) -> Self {
        self.source_free = true;
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn law(&self) -> &JumpLaw {
        &self.law
    }

    pub fn source(&self, x: &[f64]) -> Result<f64> {
        if self.source_free {
            return Ok(0.0);
        }
        (self.f)(x)
    }

    pub fn boundary(&self, x: &[f64]) -> Result<f64> {
        (self.g)(x)
    }

    pub fn has_exact(&self) -> bool {
        self.exact.is_some()
    }

    pub fn exact(&self, x: &[f64]) -> Result<f64> {
        match &self.exact {
            Some(u) => u(x),
            None => Err(Error::NoExactSolution),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkOutcome {
    /// `Σ_k ω_{r_k} f(Y_{k+1}) W(X_k, Y_{k+1})`.
    pub source_sum: f64,
    pub terminal: Vec<f64>,
    pub steps: usize,
    /// False only when the step cap stopped a walk that was still deeper
    /// than `eps`.
    pub exited: bool,
}

fn check_start(problem: &Problem, x0: &[f64], eps: f64) -> Result<()> {
    if !(eps > 0.0) {
        return Err(domain("walk", format!("eps = {eps}")));
    }
    if !problem.domain.contains(x0)? {
        return Err(domain("walk", "starting point is not inside the domain"));
    }
    Ok(())
}

/// Runs one trajectory from `x0`.
pub fn walk<R: Rng + ?Sized>(problem: &Problem, x0: &[f64], eps: f64, k_cap: usize, rng: &mut R) -> Result<WalkOutcome> {
    check_start(problem, x0, eps)?;
    let d = x0.len();
    let mut x = x0.to_vec();
    let mut y = vec![0.0; d];
    let mut dir = vec![0.0; d];
    let (source_sum, steps, exited) = walk_in_place(problem, &mut x, &mut y, &mut dir, eps, k_cap, rng)?;
    Ok(WalkOutcome {
        source_sum,
        terminal: x,
        steps,
        exited,
    })
}

fn walk_in_place<R: Rng + ?Sized>(
    problem: &Problem,
    x: &mut [f64],
    y: &mut [f64],
    dir: &mut [f64],
    eps: f64,
    k_cap: usize,
    rng: &mut R,
) -> Result<(f64, usize, bool)> {
    let law = &problem.law;
    let mut acc = 0.0;
    let mut steps = 0;
    loop {
        let r = problem.domain.depth(x);
        if !(r > eps) {
            return Ok((acc, steps, true));
        }
        if steps >= k_cap {
            return Ok((acc, steps, false));
        }
        let xi_g: f64 = Open01.sample(rng);
        let gamma = law.source_radius(r, xi_g);
        fill_direction(rng, dir);
        if !problem.source_free {
            for ((yi, xi), ui) in y.iter_mut().zip(x.iter()).zip(dir.iter()) {
                *yi = xi + gamma * ui;
            }
            let fy = (problem.f)(y)?;
            if fy != 0.0 {
                acc += law.omega(r) * fy * law.kernel(gamma, r)?;
            }
        }
        let xi_j: f64 = Open01.sample(rng);
        let jump = law.jump_distance(r, xi_j)?;
        fill_direction(rng, dir);
        for (xi, ui) in x.iter_mut().zip(dir.iter()) {
            *xi += jump * ui;
        }
        steps += 1;
    }
}

/// Running mean and squared-deviation sum over a block of trajectories.
/// Identical values leave the mean exactly at that value.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Tally {
    pub n: usize,
    pub mean: f64,
    /// `Σ (v - mean)²`.
    pub m2: f64,
    pub steps: usize,
    pub non_exited: usize,
}

impl Tally {
    fn push(&mut self, v: f64) {
        self.n += 1;
        let delta = v - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (v - self.mean);
    }

    fn merge(a: Tally, b: Tally) -> Tally {
        if a.n == 0 {
            return b;
        }
        if b.n == 0 {
            return a;
        }
        let n = a.n + b.n;
        let delta = b.mean - a.mean;
        let wb = b.n as f64 / n as f64;
        Tally {
            n,
            mean: a.mean + delta * wb,
            m2: a.m2 + b.m2 + delta * delta * a.n as f64 * wb,
            steps: a.steps + b.steps,
            non_exited: a.non_exited + b.non_exited,
        }
    }
}

/// Pairwise reduction in index order.
pub fn tree_reduce(items: &[Tally]) -> Tally {
    match items.len() {
        0 => Tally::default(),
        1 => items[0],
        n => {
            let (l, r) = items.split_at(n / 2);
            Tally::merge(tree_reduce(l), tree_reduce(r))
        }
    }
}

/// Estimate at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointEstimate {
    pub value: f64,
    pub tally: Tally,
}

impl PointEstimate {
    /// Unbiased sample variance of the per-trajectory values.
    pub fn sample_variance(&self) -> f64 {
        if self.tally.n < 2 {
            return 0.0;
        }
        self.tally.m2 / (self.tally.n - 1) as f64
    }

    pub fn std_error(&self) -> f64 {
        (self.sample_variance() / self.tally.n as f64).sqrt()
    }

    pub fn mean_steps(&self) -> f64 {
        self.tally.steps as f64 / self.tally.n as f64
    }
}

/// Runs `n_traj` walks from `x` in fixed chunks. `complete` maps a stopping
/// point and whether the cap cut the walk short to the trajectory's boundary
/// value.
fn run_chunks<C>(
    problem: &Problem,
    x: &[f64],
    n_traj: usize,
    eps: f64,
    k_cap: usize,
    stream: &Stream,
    complete: &C,
) -> Result<PointEstimate>
where
    C: Fn(&[f64], bool) -> Result<f64> + Sync,
{
    check_start(problem, x, eps)?;
    if n_traj == 0 {
        return Err(domain("estimate", "need at least one trajectory"));
    }
    let chunks = n_traj.div_ceil(CHUNK);
    let tallies = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream.child(c as u64).rng();
            let count = CHUNK.min(n_traj - c * CHUNK);
            let d = x.len();
            let mut pos = vec![0.0; d];
            let mut y = vec![0.0; d];
            let mut dir = vec![0.0; d];
            let mut t = Tally::default();
            for _ in 0..count {
                pos.copy_from_slice(x);
                let (s, steps, exited) = walk_in_place(problem, &mut pos, &mut y, &mut dir, eps, k_cap, &mut rng)?;
                // Trajectories that ran out of steps while still deep inside
                // are completed by the caller's rule; the plain estimator uses g.
                let end = complete(&pos, !exited)?;
                let v = s + end;
                t.push(v);
                t.steps += steps;
                t.non_exited += usize::from(!exited);
            }
            Ok(t)
        })
        .collect::<Result<Vec<Tally>>>()?;
    let tally = tree_reduce(&tallies);
    Ok(PointEstimate {
        value: tally.mean,
        tally,
    })
}

/// Plain FWoS estimate: mean of `source_sum + g(terminal)`.
pub fn fwos_estimate(
    problem: &Problem,
    x: &[f64],
    n_traj: usize,
    eps: f64,
    k_cap: usize,
    stream: &Stream,
) -> Result<PointEstimate> {
    run_chunks(problem, x, n_traj, eps, k_cap, stream, &|end, _| problem.boundary(end))
}

/// Truncated estimate: walks stop after `k_trunc` steps and unfinished ones
/// are completed with `completion` instead of `g`.
pub fn fwos_truncated<S>(
    problem: &Problem,
    x: &[f64],
    n_traj: usize,
    k_trunc: usize,
    eps: f64,
    completion: &S,
    stream: &Stream,
) -> Result<PointEstimate>
where
    S: Fn(&[f64]) -> Result<f64> + Sync + ?Sized,
{
    run_chunks(problem, x, n_traj, eps, k_trunc, stream, &|end, unfinished| {
        if unfinished {
            completion(end)
        } else {
            problem.boundary(end)
        }
    })
}

fn rows(points: &Array2<f64>) -> Vec<&[f64]> {
    points
        .rows()
        .into_iter()
        .map(|r| r.to_slice().expect("standard layout"))
        .collect()
}

/// [`fwos_estimate`] at every row of `points`; row `i` uses `stream.child(i)`.
pub fn fwos_estimate_many(
    problem: &Problem,
    points: &Array2<f64>,
    n_traj: usize,
    eps: f64,
    k_cap: usize,
    stream: &Stream,
) -> Result<Vec<PointEstimate>> {
    check_width(problem, points)?;
    rows(points)
        .into_par_iter()
        .enumerate()
        .map(|(i, x)| fwos_estimate(problem, x, n_traj, eps, k_cap, &stream.child(i as u64)))
        .collect()
}

/// [`fwos_truncated`] at every row of `points`; row `i` uses `stream.child(i)`.
#[allow(clippy::too_many_arguments)]
pub fn fwos_truncated_many<S>(
    problem: &Problem,
    points: &Array2<f64>,
    n_traj: usize,
    k_trunc: usize,
    eps: f64,
    completion: &S,
    stream: &Stream,
) -> Result<Vec<PointEstimate>>
where
    S: Fn(&[f64]) -> Result<f64> + Sync + ?Sized,
{
    check_width(problem, points)?;
    rows(points)
        .into_par_iter()
        .enumerate()
        .map(|(i, x)| fwos_truncated(problem, x, n_traj, k_trunc, eps, completion, &stream.child(i as u64)))
        .collect()
}

fn check_width(problem: &Problem, points: &Array2<f64>) -> Result<()> {
    if points.ncols() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: points.ncols(),
        });
    }
    Ok(())
}

/// `‖approx - exact‖ / ‖exact‖` over paired values.
pub fn relative_l2_values(approx: &[f64], exact: &[f64]) -> Result<f64> {
    if approx.len() != exact.len() || approx.is_empty() {
        return Err(Error::Shape(format!("{} values vs {} references", approx.len(), exact.len())));
    }
    let num: f64 = approx.iter().zip(exact).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = exact.iter().map(|b| b * b).sum();
    Ok((num / den).sqrt())
}

/// Relative ℓ² error of `u_hat` against the exact solution at `n_points`
/// uniform interior points drawn from `stream`.
pub fn relative_l2<U>(u_hat: &U, problem: &Problem, n_points: usize, stream: &Stream) -> Result<f64>
where
    U: Fn(&[f64]) -> Result<f64> + ?Sized,
{
    if !problem.has_exact() {
        return Err(Error::NoExactSolution);
    }
    let pts = problem.domain.sample_interior(n_points, &mut stream.rng())?;
    let mut approx = Vec::with_capacity(n_points);
    let mut exact = Vec::with_capacity(n_points);
    for x in rows(&pts) {
        approx.push(u_hat(x)?);
        exact.push(problem.exact(x)?);
    }
    relative_l2_values(&approx, &exact)
}
