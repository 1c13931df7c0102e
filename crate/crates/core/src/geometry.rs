//! Domains in `R^d`: balls, axis-aligned boxes, and constructive compositions
//! of those through union, intersection and complement.
//!
//! Distances use the "positive inside" convention: [`Domain::dist_to_boundary`]
//! is the radius of a ball around `x` that is guaranteed to lie in the domain
//! (exact for balls and boxes, a lower bound for compositions), and it is
//! zero or negative on the boundary and outside. Domains are open, so
//! boundary points are not contained.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Open01};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::fill_direction;

const MAX_CONSECUTIVE_REJECTIONS: usize = 1_000_000;
const PROJECTION_ITERS: usize = 60;

/// Primitive or composite signed-distance shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Shape {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Union { children: Vec<Shape> },
    Intersection { children: Vec<Shape> },
    Complement { child: Box<Shape> },
}

impl Shape {
    fn dim(&self) -> Result<usize> {
        match self {
            Shape::Ball { center, .. } => Ok(center.len()),
            Shape::Box { lo, .. } => Ok(lo.len()),
            Shape::Union { children } | Shape::Intersection { children } => {
                let first = children
                    .first()
                    .ok_or_else(|| Error::Config("empty shape combination".into()))?
                    .dim()?;
                for c in &children[1..] {
                    let d = c.dim()?;
                    if d != first {
                        return Err(Error::DimensionMismatch { expected: first, got: d });
                    }
                }
                Ok(first)
            }
            Shape::Complement { child } => child.dim(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Shape::Ball { radius, center } => {
                if !(*radius > 0.0) || center.iter().any(|c| !c.is_finite()) {
                    return Err(Error::Config(format!("ball radius must be positive, got {radius}")));
                }
            }
            Shape::Box { lo, hi } => validate_box(lo, hi)?,
            Shape::Union { children } | Shape::Intersection { children } => {
                for c in children {
                    c.validate()?;
                }
            }
            Shape::Complement { child } => child.validate()?,
        }
        Ok(())
    }

    /// Positive-inside distance (lower bound for compositions).
    pub fn depth(&self, x: &[f64]) -> f64 {
        match self {
            Shape::Ball { center, radius } => radius - euclid(x, center),
            Shape::Box { lo, hi } => box_depth(lo, hi, x),
            Shape::Union { children } => children
                .iter()
                .map(|c| c.depth(x))
                .fold(f64::NEG_INFINITY, f64::max),
            Shape::Intersection { children } => children
                .iter()
                .map(|c| c.depth(x))
                .fold(f64::INFINITY, f64::min),
            Shape::Complement { child } => -child.depth(x),
        }
    }

    fn bounding_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            Shape::Ball { center, radius } => Some((
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            )),
            Shape::Box { lo, hi } => Some((lo.clone(), hi.clone())),
            Shape::Union { children } => {
                let mut acc: Option<(Vec<f64>, Vec<f64>)> = None;
                for c in children {
                    let (lo, hi) = c.bounding_box()?;
                    acc = Some(match acc {
                        None => (lo, hi),
                        Some((alo, ahi)) => (
                            alo.iter().zip(&lo).map(|(a, b)| a.min(*b)).collect(),
                            ahi.iter().zip(&hi).map(|(a, b)| a.max(*b)).collect(),
                        ),
                    });
                }
                acc
            }
            Shape::Intersection { children } => {
                let mut acc: Option<(Vec<f64>, Vec<f64>)> = None;
                for (lo, hi) in children.iter().filter_map(|c| c.bounding_box()) {
                    acc = Some(match acc {
                        None => (lo, hi),
                        Some((alo, ahi)) => (
                            alo.iter().zip(&lo).map(|(a, b)| a.max(*b)).collect(),
                            ahi.iter().zip(&hi).map(|(a, b)| a.min(*b)).collect(),
                        ),
                    });
                }
                acc
            }
            Shape::Complement { .. } => None,
        }
    }
}

fn validate_box(lo: &[f64], hi: &[f64]) -> Result<()> {
    if lo.len() != hi.len() {
        return Err(Error::DimensionMismatch { expected: lo.len(), got: hi.len() });
    }
    if lo.is_empty() {
        return Err(Error::Config("hypercube needs at least one dimension".into()));
    }
    if lo.iter().zip(hi).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
        return Err(Error::Config("hypercube requires lo < hi componentwise".into()));
    }
    Ok(())
}

fn euclid(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn box_depth(lo: &[f64], hi: &[f64], x: &[f64]) -> f64 {
    let mut inside = f64::INFINITY;
    let mut outside_sq = 0.0;
    for ((&l, &h), &xi) in lo.iter().zip(hi).zip(x) {
        let below = l - xi;
        let above = xi - h;
        let out = below.max(above);
        if out > 0.0 {
            outside_sq += out * out;
        } else {
            inside = inside.min(-out);
        }
    }
    if outside_sq > 0.0 {
        -outside_sq.sqrt()
    } else {
        inside
    }
}

/// Shape of a [`Domain`] as written in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainKind {
    Ball { center: Vec<f64>, radius: f64 },
    Hypercube { lo: Vec<f64>, hi: Vec<f64> },
    Composite { shape: Shape },
}

/// A bounded open domain with cached bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DomainKind", into = "DomainKind")]
pub struct Domain {
    kind: DomainKind,
    dim: usize,
    bbox_lo: Vec<f64>,
    bbox_hi: Vec<f64>,
}

impl TryFrom<DomainKind> for Domain {
    type Error = Error;

    fn try_from(kind: DomainKind) -> Result<Self> {
        let (dim, (bbox_lo, bbox_hi)) = match &kind {
            DomainKind::Ball { center, radius } => {
                let s = Shape::Ball { center: center.clone(), radius: *radius };
                s.validate()?;
                if center.is_empty() {
                    return Err(Error::Config("ball needs at least one dimension".into()));
                }
                (center.len(), s.bounding_box().expect("ball is bounded"))
            }
            DomainKind::Hypercube { lo, hi } => {
                validate_box(lo, hi)?;
                (lo.len(), (lo.clone(), hi.clone()))
            }
            DomainKind::Composite { shape } => {
                shape.validate()?;
                let dim = shape.dim()?;
                let bbox = shape
                    .bounding_box()
                    .ok_or_else(|| Error::Config("composite domain is unbounded".into()))?;
                if bbox.0.iter().zip(&bbox.1).any(|(l, h)| !(l < h)) {
                    return Err(Error::Config("composite domain is empty".into()));
                }
                (dim, bbox)
            }
        };
        Ok(Self { kind, dim, bbox_lo, bbox_hi })
    }
}

impl From<Domain> for DomainKind {
    fn from(d: Domain) -> Self {
        d.kind
    }
}

impl Domain {
    pub fn new(kind: DomainKind) -> Result<Self> {
        Self::try_from(kind)
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        Self::new(DomainKind::Ball { center, radius })
    }

    pub fn unit_ball(dim: usize) -> Result<Self> {
        Self::ball(vec![0.0; dim], 1.0)
    }

    pub fn hypercube(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        Self::new(DomainKind::Hypercube { lo, hi })
    }

    /// `(0, 1)^dim`.
    pub fn unit_cube(dim: usize) -> Result<Self> {
        Self::hypercube(vec![0.0; dim], vec![1.0; dim])
    }

    pub fn composite(shape: Shape) -> Result<Self> {
        Self::new(DomainKind::Composite { shape })
    }

    /// Lumpy union of three overlapping balls.
    pub fn blob(dim: usize) -> Result<Self> {
        let at = |c: &[f64]| {
            let mut v = vec![0.0; dim];
            for (vi, ci) in v.iter_mut().zip(c) {
                *vi = *ci;
            }
            v
        };
        Self::composite(Shape::Union {
            children: vec![
                Shape::Ball { center: at(&[0.0, 0.0, 0.0]), radius: 0.6 },
                Shape::Ball { center: at(&[0.55, 0.2, 0.1]), radius: 0.42 },
                Shape::Ball { center: at(&[-0.35, 0.45, -0.2]), radius: 0.38 },
            ],
        })
    }

    /// Unit ball with an off-center spherical cavity carved out.
    pub fn shell(dim: usize) -> Result<Self> {
        let mut cavity = vec![0.0; dim];
        cavity[0] = 0.35;
        Self::composite(Shape::Intersection {
            children: vec![
                Shape::Ball { center: vec![0.0; dim], radius: 1.0 },
                Shape::Complement {
                    child: Box::new(Shape::Ball { center: cavity, radius: 0.45 }),
                },
            ],
        })
    }

    pub fn kind(&self) -> &DomainKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_composite(&self) -> bool {
        matches!(self.kind, DomainKind::Composite { .. })
    }

    pub fn bounding_box(&self) -> (&[f64], &[f64]) {
        (&self.bbox_lo, &self.bbox_hi)
    }

    /// Length of the bounding-box diagonal.
    pub fn diameter(&self) -> f64 {
        euclid(&self.bbox_lo, &self.bbox_hi)
    }

    /// Positive-inside distance without the dimension check. Hot path.
    #[inline]
    pub fn depth(&self, x: &[f64]) -> f64 {
        match &self.kind {
            DomainKind::Ball { center, radius } => radius - euclid(x, center),
            DomainKind::Hypercube { lo, hi } => box_depth(lo, hi, x),
            DomainKind::Composite { shape } => shape.depth(x),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok(())
    }

    /// Radius of an inscribed ball at `x`; `<= 0` on the boundary and outside.
    pub fn dist_to_boundary(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.depth(x))
    }

    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        Ok(self.dist_to_boundary(x)? > 0.0)
    }

    /// `n` i.i.d. uniform points of the domain, one per row.
    pub fn sample_interior<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Array2<f64>> {
        if n == 0 {
            return Err(Error::Config("sample_interior needs n >= 1".into()));
        }
        let d = self.dim;
        let mut out = Array2::zeros((n, d));
        for mut row in out.rows_mut() {
            let row = row.as_slice_mut().expect("standard layout");
            match &self.kind {
                DomainKind::Ball { center, radius } => {
                    fill_direction(rng, row);
                    let u: f64 = rng.random();
                    let rho = radius * u.powf(1.0 / d as f64);
                    for (xi, ci) in row.iter_mut().zip(center) {
                        *xi = ci + rho * *xi;
                    }
                }
                DomainKind::Hypercube { lo, hi } => {
                    for ((xi, l), h) in row.iter_mut().zip(lo).zip(hi) {
                        let u: f64 = Open01.sample(rng);
                        *xi = l + (h - l) * u;
                    }
                }
                DomainKind::Composite { shape } => {
                    self.reject_into(rng, row, |x| shape.depth(x) > 0.0, 0.0)?;
                }
            }
        }
        Ok(out)
    }

    fn reject_into<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        row: &mut [f64],
        accept: impl Fn(&[f64]) -> bool,
        pad: f64,
    ) -> Result<()> {
        for _ in 0..MAX_CONSECUTIVE_REJECTIONS {
            for ((xi, l), h) in row.iter_mut().zip(&self.bbox_lo).zip(&self.bbox_hi) {
                let u: f64 = rng.random();
                *xi = (l - pad) + (h - l + 2.0 * pad) * u;
            }
            if accept(row) {
                return Ok(());
            }
        }
        Err(Error::Sampling(format!(
            "{MAX_CONSECUTIVE_REJECTIONS} consecutive rejections; domain looks degenerate"
        )))
    }

    /// `n` points on the boundary, one per row. Uniform for balls and boxes;
    /// for compositions, near-boundary rejection samples projected onto the
    /// zero level set along the finite-difference gradient.
    pub fn sample_boundary<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Array2<f64>> {
        if n == 0 {
            return Err(Error::Config("sample_boundary needs n >= 1".into()));
        }
        let d = self.dim;
        let mut out = Array2::zeros((n, d));
        match &self.kind {
            DomainKind::Ball { center, radius } => {
                for mut row in out.rows_mut() {
                    let row = row.as_slice_mut().expect("standard layout");
                    fill_direction(rng, row);
                    for (xi, ci) in row.iter_mut().zip(center) {
                        *xi = ci + radius * *xi;
                    }
                }
            }
            DomainKind::Hypercube { lo, hi } => {
                let widths: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| h - l).collect();
                // Face pair i has area prod_{j != i} w_j = vol / w_i.
                let weights: Vec<f64> = widths.iter().map(|w| 1.0 / w).collect();
                let total: f64 = weights.iter().sum();
                for mut row in out.rows_mut() {
                    let row = row.as_slice_mut().expect("standard layout");
                    let mut pick = rng.random::<f64>() * total;
                    let mut axis = d - 1;
                    for (i, w) in weights.iter().enumerate() {
                        if pick < *w {
                            axis = i;
                            break;
                        }
                        pick -= w;
                    }
                    for (j, xi) in row.iter_mut().enumerate() {
                        *xi = lo[j] + widths[j] * rng.random::<f64>();
                    }
                    row[axis] = if rng.random::<bool>() { hi[axis] } else { lo[axis] };
                }
            }
            DomainKind::Composite { shape } => {
                let diam = self.diameter();
                let band = 1e-2 * diam;
                let tol = 1e-9 * diam;
                for mut row in out.rows_mut() {
                    let row = row.as_slice_mut().expect("standard layout");
                    let mut placed = false;
                    for _ in 0..MAX_CONSECUTIVE_REJECTIONS {
                        self.reject_into(rng, row, |x| shape.depth(x).abs() < band, band)?;
                        if project_to_zero_set(shape, row, diam, tol) {
                            placed = true;
                            break;
                        }
                    }
                    if !placed {
                        return Err(Error::Sampling("boundary projection kept failing".into()));
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Newton iteration on the level-set value along a central-difference
/// gradient. Returns false if it fails to land within `tol`.
fn project_to_zero_set(shape: &Shape, x: &mut [f64], diam: f64, tol: f64) -> bool {
    let h = 1e-7 * diam;
    let mut grad = vec![0.0; x.len()];
    for _ in 0..PROJECTION_ITERS {
        let phi = shape.depth(x);
        if phi.abs() < tol {
            return true;
        }
        for i in 0..x.len() {
            let orig = x[i];
            x[i] = orig + h;
            let up = shape.depth(x);
            x[i] = orig - h;
            let dn = shape.depth(x);
            x[i] = orig;
            grad[i] = (up - dn) / (2.0 * h);
        }
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        if !(g2 > 1e-12) {
            return false;
        }
        for (xi, gi) in x.iter_mut().zip(&grad) {
            *xi -= phi * gi / g2;
        }
    }
    shape.depth(x).abs() < tol
}

/// A pre-generated set of boundary points from which training batches are
/// drawn without replacement.
#[derive(Debug, Clone)]
pub struct BoundaryPool {
    points: Array2<f64>,
}

impl BoundaryPool {
    pub fn generate<R: Rng + ?Sized>(domain: &Domain, size: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            points: domain.sample_boundary(size, rng)?,
        })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Array2<f64>> {
        if n > self.len() {
            return Err(Error::Sampling(format!(
                "boundary pool exhausted: asked for {n}, pool holds {}",
                self.len()
            )));
        }
        let idx = rand::seq::index::sample(rng, self.len(), n);
        Ok(self.points.select(ndarray::Axis(0), &idx.into_vec()))
    }
}
