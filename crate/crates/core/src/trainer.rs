//! Surrogate training on walk-on-spheres targets.
//!
//! [`train_fnwos`] regresses onto targets computed once up front.
//! [`train_bfnwos`] keeps a buffer of `10m` supervised points whose targets
//! come from step-capped walks completed by a frozen copy of the network;
//! every `L` iterations past the warm-up it refreshes the frozen copy, folds
//! fresh estimates into part of the buffer and replaces another part.

use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundaryPool;
use crate::rng::{tags, Stream};
use crate::surrogate::{LossParts, OptimizerState, Surrogate};
use crate::walker::{fwos_estimate_many, fwos_truncated_many, tree_reduce, PointEstimate, Problem};

/// Iterations between partial checkpoint callbacks.
pub const CHECKPOINT_EVERY: u64 = 1000;

fn default_lr() -> f64 {
    1e-3
}

fn default_true() -> bool {
    true
}

/// Hyper-parameters of a training run. `half_batch` is `m`: a batch holds
/// `2m` points split between interior and boundary by `boundary_fraction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPlan {
    pub iterations: u64,
    pub warmup: u64,
    pub refresh_interval: u64,
    pub half_batch: usize,
    pub boundary_fraction: f64,
    pub refine_fraction: f64,
    pub n_traj: usize,
    pub n_init: usize,
    pub k_cap: usize,
    pub k_init: usize,
    pub eps: f64,
    pub beta: f64,
    pub width: usize,
    pub depth: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Turns the replacement half of the buffer refresh on or off.
    #[serde(default = "default_true")]
    pub replacement: bool,
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.half_batch == 0 {
            return bad("half_batch must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.boundary_fraction) || !(0.0..=1.0).contains(&self.refine_fraction) {
            return bad("boundary_fraction and refine_fraction must lie in [0, 1]");
        }
        if self.n_traj == 0 || self.n_init == 0 || self.k_cap == 0 || self.k_init == 0 {
            return bad("trajectory counts and step caps must be at least 1");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be non-negative");
        }
        if self.refresh_interval == 0 {
            return bad("refresh_interval must be at least 1");
        }
        if self.width == 0 || self.depth == 0 {
            return bad("width and depth must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.interior_batch() == 0 {
            return bad("boundary_fraction leaves no interior points in the batch");
        }
        if self.beta > 0.0 && self.boundary_batch() == 0 {
            return bad("beta > 0 but boundary_fraction gives an empty boundary batch");
        }
        if self.refine_count() + self.replace_count() > self.buffer_size() {
            return bad("refine plus replace counts exceed the buffer size");
        }
        Ok(())
    }

    /// `m_B = round(2m P_B)`.
    pub fn boundary_batch(&self) -> usize {
        (2.0 * self.half_batch as f64 * self.boundary_fraction).round() as usize
    }

    /// `m_I = 2m - m_B`.
    pub fn interior_batch(&self) -> usize {
        2 * self.half_batch - self.boundary_batch()
    }

    /// `B = 10m`.
    pub fn buffer_size(&self) -> usize {
        10 * self.half_batch
    }

    /// `B_1 = round(m P_ℬ)`.
    pub fn refine_count(&self) -> usize {
        (self.half_batch as f64 * self.refine_fraction).round() as usize
    }

    /// `B_2 = m - B_1`, or zero with replacement switched off.
    pub fn replace_count(&self) -> usize {
        if self.replacement {
            self.half_batch - self.refine_count()
        } else {
            0
        }
    }

    pub fn pool_size(&self) -> usize {
        50 * self.boundary_batch()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry {
    pub point: Vec<f64>,
    pub target: f64,
    /// Total trajectories folded into `target`.
    pub traj_count: u64,
}

/// Supervision buffer, stored column-wise for batching.
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer {
    points: Array2<f64>,
    targets: Vec<f64>,
    counts: Vec<u64>,
}

impl Buffer {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn entry(&self, i: usize) -> BufferEntry {
        BufferEntry {
            point: self.points.row(i).to_vec(),
            target: self.targets[i],
            traj_count: self.counts[i],
        }
    }

    pub fn mean_count(&self) -> f64 {
        self.counts.iter().map(|&c| c as f64).sum::<f64>() / self.len() as f64
    }

    /// Folds an `n`-trajectory estimate `y` into entry `i`.
    pub fn refine(&mut self, i: usize, y: f64, n: u64) {
        let fre = self.counts[i] as f64;
        let nf = n as f64;
        self.targets[i] = (fre * self.targets[i] + nf * y) / (fre + nf);
        self.counts[i] += n;
    }

    pub fn replace(&mut self, i: usize, point: &[f64], y: f64, n: u64) {
        self.points.row_mut(i).assign(&ndarray::ArrayView1::from(point));
        self.targets[i] = y;
        self.counts[i] = n;
    }
}

/// One row of the per-iteration training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterRecord {
    pub iteration: u64,
    pub lr: f64,
    pub interior: f64,
    pub boundary: f64,
    pub total: f64,
}

/// Statistics of one target-generation pass (initial targets or a refresh).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefreshRecord {
    pub iteration: u64,
    pub refined: usize,
    pub replaced: usize,
    pub mean_count: f64,
    pub mean_steps: f64,
    pub non_exited_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub iterations: Vec<IterRecord>,
    pub refreshes: Vec<RefreshRecord>,
    pub sampling_secs: f64,
    pub training_secs: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub surrogate: Surrogate,
    pub optimizer: OptimizerState,
    pub log: TrainLog,
    /// Final buffer for BFNWoS, fixed training set for FNWoS.
    pub buffer: Buffer,
}

/// Called every [`CHECKPOINT_EVERY`] iterations with the completed
/// iteration count.
pub type Checkpointer<'a> = &'a mut dyn FnMut(u64, &Surrogate, &OptimizerState) -> Result<()>;

fn walk_stats(iteration: u64, est: &[PointEstimate], refined: usize, replaced: usize, mean_count: f64) -> RefreshRecord {
    let tallies: Vec<_> = est.iter().map(|e| e.tally).collect();
    let t = tree_reduce(&tallies);
    let n = t.n.max(1) as f64;
    RefreshRecord {
        iteration,
        refined,
        replaced,
        mean_count,
        mean_steps: t.steps as f64 / n,
        non_exited_rate: t.non_exited as f64 / n,
    }
}

enum BoundarySource {
    Direct,
    Pool(BoundaryPool),
}

struct Stepper<'a> {
    problem: &'a Problem,
    plan: &'a TrainPlan,
    stream: Stream,
    boundary: BoundarySource,
    net: Surrogate,
    opt: OptimizerState,
}

impl<'a> Stepper<'a> {
    fn new(problem: &'a Problem, plan: &'a TrainPlan, stream: &Stream) -> Result<Self> {
        plan.validate()?;
        let net = Surrogate::init_from(problem.dim(), plan.width, plan.depth, &stream.child(tags::INIT))?;
        let opt = OptimizerState::new(&net, plan.learning_rate, plan.iterations)?;
        let boundary = if problem.domain().is_composite() && plan.boundary_batch() > 0 {
            let mut rng = stream.child(tags::POOL).rng();
            BoundarySource::Pool(BoundaryPool::generate(problem.domain(), plan.pool_size(), &mut rng)?)
        } else {
            BoundarySource::Direct
        };
        Ok(Self {
            problem,
            plan,
            stream: *stream,
            boundary,
            net,
            opt,
        })
    }

    fn boundary_batch(&self, k: u64) -> Result<(Array2<f64>, Array1<f64>)> {
        let m_b = self.plan.boundary_batch();
        let d = self.problem.dim();
        if m_b == 0 {
            return Ok((Array2::zeros((0, d)), Array1::zeros(0)));
        }
        let mut rng = self.stream.child(tags::BOUNDARY).child(k).rng();
        let pts = match &self.boundary {
            BoundarySource::Direct => self.problem.domain().sample_boundary(m_b, &mut rng)?,
            BoundarySource::Pool(pool) => pool.draw(m_b, &mut rng)?,
        };
        let g = pts
            .rows()
            .into_iter()
            .map(|r| self.problem.boundary(r.as_slice().expect("standard layout")))
            .collect::<Result<Vec<_>>>()?;
        Ok((pts, Array1::from(g)))
    }

    fn step(&mut self, k: u64, x_int: &Array2<f64>, y_int: &Array1<f64>) -> Result<IterRecord> {
        let (xb, gb) = self.boundary_batch(k)?;
        let lr = self.opt.lr();
        let (loss, grads): (LossParts, _) =
            self.net
                .loss_and_grad(x_int.view(), y_int.view(), xb.view(), gb.view(), self.plan.beta)?;
        self.net.adam_step(&mut self.opt, &grads)?;
        Ok(IterRecord {
            iteration: k,
            lr,
            interior: loss.interior,
            boundary: loss.boundary,
            total: loss.total,
        })
    }

    fn maybe_checkpoint(&self, k: u64, ckpt: &mut Option<Checkpointer>) -> Result<()> {
        let done = k + 1;
        if done.is_multiple_of(CHECKPOINT_EVERY) {
            if let Some(cb) = ckpt.as_mut() {
                cb(done, &self.net, &self.opt)?;
            }
        }
        Ok(())
    }
}

/// Uniform interior points for training, drawn row by row from one stream.
/// Any prefix of a larger draw equals a smaller draw.
fn training_points(problem: &Problem, n: usize, stream: &Stream) -> Result<Array2<f64>> {
    problem
        .domain()
        .sample_interior(n, &mut stream.child(tags::TRAIN_POINTS).rng())
}

/// Fixed-target training.
pub fn train_fnwos(
    problem: &Problem,
    plan: &TrainPlan,
    stream: &Stream,
    mut ckpt: Option<Checkpointer>,
) -> Result<TrainReport> {
    let mut st = Stepper::new(problem, plan, stream)?;
    let mut log = TrainLog::default();
    let t0 = Instant::now();
    let m_i = plan.interior_batch();
    let points = training_points(problem, m_i, stream)?;
    let est = fwos_estimate_many(problem, &points, plan.n_traj, plan.eps, plan.k_cap, &stream.child(tags::TARGETS))?;
    let targets = Array1::from_iter(est.iter().map(|e| e.value));
    log.refreshes
        .push(walk_stats(0, &est, 0, 0, plan.n_traj as f64));
    log.sampling_secs = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    for k in 0..plan.iterations {
        let rec = st.step(k, &points, &targets)?;
        log.iterations.push(rec);
        st.maybe_checkpoint(k, &mut ckpt)?;
    }
    log.training_secs = t1.elapsed().as_secs_f64();
    let buffer = Buffer {
        points,
        targets: targets.to_vec(),
        counts: vec![plan.n_traj as u64; m_i],
    };
    Ok(TrainReport {
        surrogate: st.net,
        optimizer: st.opt,
        log,
        buffer,
    })
}

/// Initial buffer: `B = 10m` points with `N_init`-trajectory targets capped
/// at `K_init` steps and completed by `frozen`.
pub fn init_buffer(problem: &Problem, plan: &TrainPlan, frozen: &Surrogate, stream: &Stream) -> Result<(Buffer, RefreshRecord)> {
    plan.validate()?;
    let b = plan.buffer_size();
    let points = training_points(problem, b, stream)?;
    let completion = |x: &[f64]| frozen.predict_one(x);
    let est = fwos_truncated_many(
        problem,
        &points,
        plan.n_init,
        plan.k_init,
        plan.eps,
        &completion,
        &stream.child(tags::TARGETS),
    )?;
    let stats = walk_stats(0, &est, 0, 0, plan.n_init as f64);
    Ok((
        Buffer {
            points,
            targets: est.iter().map(|e| e.value).collect(),
            counts: vec![plan.n_init as u64; b],
        },
        stats,
    ))
}

/// Refines `B_1` random entries by weighted averaging and replaces `B_2`
/// other entries with fresh points. Both sets are disjoint.
pub fn refresh_buffer(
    buffer: &mut Buffer,
    problem: &Problem,
    plan: &TrainPlan,
    frozen: &Surrogate,
    iteration: u64,
    stream: &Stream,
) -> Result<RefreshRecord> {
    let b1 = plan.refine_count();
    let b2 = plan.replace_count();
    if b1 + b2 > buffer.len() {
        return Err(Error::Config(format!(
            "refresh wants {b1} + {b2} entries from a buffer of {}",
            buffer.len()
        )));
    }
    let s = stream.child(tags::REFRESH).child(iteration);
    let picked = rand::seq::index::sample(&mut s.child(0).rng(), buffer.len(), b1 + b2).into_vec();
    let (refine_idx, replace_idx) = picked.split_at(b1);
    let completion = |x: &[f64]| frozen.predict_one(x);
    let n = plan.n_traj as u64;

    let refine_pts = buffer.points.select(Axis(0), refine_idx);
    let mut all_est = Vec::with_capacity(b1 + b2);
    if b1 > 0 {
        let est = fwos_truncated_many(problem, &refine_pts, plan.n_traj, plan.k_cap, plan.eps, &completion, &s.child(1))?;
        for (&i, e) in refine_idx.iter().zip(&est) {
            buffer.refine(i, e.value, n);
        }
        all_est.extend(est);
    }
    if b2 > 0 {
        let fresh = problem.domain().sample_interior(b2, &mut s.child(2).rng())?;
        let est = fwos_truncated_many(problem, &fresh, plan.n_traj, plan.k_cap, plan.eps, &completion, &s.child(3))?;
        for ((&i, row), e) in replace_idx.iter().zip(fresh.rows()).zip(&est) {
            buffer.replace(i, row.as_slice().expect("standard layout"), e.value, n);
        }
        all_est.extend(est);
    }
    Ok(walk_stats(iteration, &all_est, b1, b2, buffer.mean_count()))
}

/// Buffered training with step-capped targets and a hard-updated frozen
/// network.
pub fn train_bfnwos(
    problem: &Problem,
    plan: &TrainPlan,
    stream: &Stream,
    mut ckpt: Option<Checkpointer>,
) -> Result<TrainReport> {
    let mut st = Stepper::new(problem, plan, stream)?;
    let mut log = TrainLog::default();
    let mut frozen = st.net.clone();
    let mut sampling = 0.0;
    let mut training = 0.0;

    let t0 = Instant::now();
    let (mut buffer, stats) = init_buffer(problem, plan, &frozen, stream)?;
    log.refreshes.push(stats);
    sampling += t0.elapsed().as_secs_f64();

    let m_i = plan.interior_batch();
    for k in 0..plan.iterations {
        if k % plan.refresh_interval == 0 && k > plan.warmup {
            let t = Instant::now();
            frozen = st.net.clone();
            log.refreshes
                .push(refresh_buffer(&mut buffer, problem, plan, &frozen, k, stream)?);
            sampling += t.elapsed().as_secs_f64();
        }
        let t = Instant::now();
        let mut rng = stream.child(tags::BATCH).child(k).rng();
        let idx = rand::seq::index::sample(&mut rng, buffer.len(), m_i).into_vec();
        let x = buffer.points.select(Axis(0), &idx);
        let y = Array1::from_iter(idx.iter().map(|&i| buffer.targets[i]));
        let rec = st.step(k, &x, &y)?;
        log.iterations.push(rec);
        st.maybe_checkpoint(k, &mut ckpt)?;
        training += t.elapsed().as_secs_f64();
    }
    log.sampling_secs = sampling;
    log.training_secs = training;
    Ok(TrainReport {
        surrogate: st.net,
        optimizer: st.opt,
        log,
        buffer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_problem, BenchmarkId};

    fn plan() -> TrainPlan {
        TrainPlan {
            iterations: 30,
            warmup: 5,
            refresh_interval: 10,
            half_batch: 16,
            boundary_fraction: 0.25,
            refine_fraction: 0.5,
            n_traj: 8,
            n_init: 4,
            k_cap: 3,
            k_init: 3,
            eps: 1e-4,
            beta: 1.0,
            width: 8,
            depth: 1,
            learning_rate: 1e-3,
            replacement: true,
        }
    }

    #[test]
    fn derived_sizes() {
        let p = TrainPlan {
            half_batch: 8192,
            boundary_fraction: 0.1,
            refine_fraction: 0.6,
            ..plan()
        };
        assert_eq!(p.boundary_batch(), 1638);
        assert_eq!(p.interior_batch(), 16384 - 1638);
        assert_eq!(p.buffer_size(), 81920);
        assert_eq!(p.refine_count(), 4915);
        assert_eq!(p.replace_count(), 8192 - 4915);
        let off = TrainPlan { replacement: false, ..p };
        assert_eq!(off.replace_count(), 0);
    }

    #[test]
    fn invalid_plans() {
        assert!(TrainPlan { iterations: 0, ..plan() }.validate().is_err());
        assert!(TrainPlan { boundary_fraction: 1.0, ..plan() }.validate().is_err());
        assert!(TrainPlan { boundary_fraction: 0.0, ..plan() }.validate().is_err());
        assert!(TrainPlan { boundary_fraction: 0.0, beta: 0.0, ..plan() }.validate().is_ok());
        assert!(TrainPlan { eps: 0.0, ..plan() }.validate().is_err());
    }

    #[test]
    fn refine_arithmetic() {
        let mut b = Buffer {
            points: Array2::zeros((1, 2)),
            targets: vec![1.0],
            counts: vec![100],
        };
        b.refine(0, 2.0, 100);
        assert_eq!(b.targets[0], 1.5);
        assert_eq!(b.counts[0], 200);
    }

    #[test]
    fn zero_problem_buffer_is_zero() {
        let problem = make_problem(&BenchmarkId::constant(3, 1.0, 0.0)).unwrap();
        let frozen = Surrogate::zeros(3, 8, 1).unwrap();
        let (buf, _) = init_buffer(&problem, &TrainPlan { n_init: 1, ..plan() }, &frozen, &Stream::new(1)).unwrap();
        assert_eq!(buf.len(), 160);
        assert!(buf.targets().iter().all(|&t| t == 0.0));
        assert!(buf.counts().iter().all(|&c| c == 1));
        for i in 0..buf.len() {
            assert!(problem.domain().contains(&buf.entry(i).point).unwrap());
        }
    }

    /// Network whose output is the constant `c`.
    fn constant_net(d: usize, c: f64) -> Surrogate {
        let mut s = Surrogate::zeros(d, 8, 1).unwrap();
        let mut flat = s.to_flat();
        *flat.last_mut().unwrap() = c;
        s.set_flat(&flat).unwrap();
        s
    }

    #[test]
    fn refresh_counts_and_constant_targets() {
        let problem = make_problem(&BenchmarkId::constant(2, 0.8, 1.25)).unwrap();
        let p = TrainPlan {
            replacement: false,
            refine_fraction: 1.0,
            ..plan()
        };
        let frozen = constant_net(2, 1.25);
        let s = Stream::new(3);
        let (mut buf, _) = init_buffer(&problem, &p, &frozen, &s).unwrap();
        let total_before: u64 = buf.counts().iter().sum();
        for r in 0..4 {
            let rec = refresh_buffer(&mut buf, &problem, &p, &frozen, 10 * (r + 1), &s).unwrap();
            assert_eq!(rec.refined, 16);
            assert_eq!(rec.replaced, 0);
        }
        assert!(buf.targets().iter().all(|&t| t == 1.25));
        let total_after: u64 = buf.counts().iter().sum();
        assert_eq!(total_after - total_before, 4 * 16 * 8);
        assert_eq!(buf.len(), p.buffer_size());
    }

    #[test]
    fn replaced_entries_reset_count() {
        let problem = make_problem(&BenchmarkId::constant(2, 0.8, 1.0)).unwrap();
        let p = TrainPlan {
            refine_fraction: 0.0,
            ..plan()
        };
        let frozen = Surrogate::zeros(2, 8, 1).unwrap();
        let s = Stream::new(4);
        let (mut buf, _) = init_buffer(&problem, &p, &frozen, &s).unwrap();
        let before = buf.clone();
        refresh_buffer(&mut buf, &problem, &p, &frozen, 20, &s).unwrap();
        let changed: Vec<usize> = (0..buf.len()).filter(|&i| buf.entry(i) != before.entry(i)).collect();
        assert_eq!(changed.len(), 16);
        assert!(changed.iter().all(|&i| buf.counts()[i] == 8));
    }

    #[test]
    fn bfnwos_runs_and_is_reproducible() {
        let problem = make_problem(&BenchmarkId::ball_poly(3, 1.2)).unwrap();
        let a = train_bfnwos(&problem, &plan(), &Stream::new(9), None).unwrap();
        let b = train_bfnwos(&problem, &plan(), &Stream::new(9), None).unwrap();
        assert_eq!(a.surrogate, b.surrogate);
        assert_eq!(a.buffer, b.buffer);
        assert_eq!(a.log.iterations, b.log.iterations);
        // refreshes fire at k = 10 and 20 (k > C = 5)
        assert_eq!(a.log.refreshes.len(), 3);
        assert_eq!(a.buffer.len(), 160);
    }

    #[test]
    fn reduction_to_fixed_targets() {
        let problem = make_problem(&BenchmarkId::ball_poly(3, 0.7)).unwrap();
        let p = TrainPlan {
            iterations: 3,
            refresh_interval: 1000,
            n_traj: 16,
            n_init: 16,
            k_cap: 1_000_000,
            k_init: 1_000_000,
            ..plan()
        };
        let s = Stream::new(12);
        let fn_run = train_fnwos(&problem, &p, &s, None).unwrap();
        let bf_run = train_bfnwos(&problem, &p, &s, None).unwrap();
        let m_i = p.interior_batch();
        assert_eq!(fn_run.buffer.points, bf_run.buffer.points.slice(ndarray::s![..m_i, ..]));
        let a: Vec<u64> = fn_run.buffer.targets.iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = bf_run.buffer.targets[..m_i].iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }
}
