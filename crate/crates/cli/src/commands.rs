//! Subcommand implementations. Each writes its files under an output
//! directory and returns the summary it also saves as `summary.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use fracwos_core::problems::make_problem;
use fracwos_core::rng::tags;
use fracwos_core::surrogate::{load_checkpoint, save_checkpoint};
use fracwos_core::trainer::{train_bfnwos, train_fnwos, Checkpointer, TrainReport};
use fracwos_core::walker::{fwos_estimate_many, relative_l2_values, tree_reduce, PointEstimate};
use fracwos_core::{OptimizerState, Problem, Stream, Surrogate, TrainPlan};
use ndarray::{s, Array2};
use serde::Serialize;

use crate::config::{FwosSettings, Method, RunConfig};

/// Rows per surrogate forward pass during evaluation.
const EVAL_BATCH: usize = 4096;

pub const SUMMARY_FILE: &str = "summary.json";
pub const POINTS_FILE: &str = "points.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const PARTIAL_CHECKPOINT_FILE: &str = "checkpoint.partial.json";
pub const TRAIN_LOG_FILE: &str = "training_log.csv";
pub const REFRESH_LOG_FILE: &str = "refresh_log.csv";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

/// Error statistics of a set of estimates against the exact solution.
#[derive(Debug, Clone, Serialize)]
pub struct FwosStats {
    pub relative_l2: Option<f64>,
    pub mean_steps: f64,
    pub non_exited_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub command: &'static str,
    pub seed: u64,
    pub n_points: usize,
    #[serde(flatten)]
    pub stats: FwosStats,
    pub wall_secs: f64,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub command: &'static str,
    pub method: Method,
    pub seed: u64,
    pub n_points: usize,
    pub relative_l2: Option<f64>,
    pub final_loss: f64,
    /// Mean walk length and cap-hit rate, averaged over target-generation passes.
    pub mean_steps: f64,
    pub non_exited_rate: f64,
    pub refreshes: usize,
    pub sampling_secs: f64,
    pub training_secs: f64,
    pub eval_secs: f64,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub repeat: u64,
    pub seed: u64,
    pub n_traj: usize,
    pub relative_l2: f64,
    pub mean_steps: f64,
    pub non_exited_rate: f64,
    pub secs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceSummary {
    pub command: &'static str,
    pub seed: u64,
    pub n_points: usize,
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of log error against log N, per repeat. `None`
    /// when some error is zero or not finite.
    pub slopes: Vec<Option<f64>>,
    pub slope_skipped: bool,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub repeat: u64,
    pub seed: u64,
    pub replacement: bool,
    pub relative_l2: Option<f64>,
    pub sampling_secs: f64,
    pub training_secs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationSummary {
    pub command: &'static str,
    pub seed: u64,
    pub n_points: usize,
    pub rows: Vec<AblationRow>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub command: &'static str,
    pub checkpoint: PathBuf,
    pub step: u64,
    pub seed: u64,
    pub n_points: usize,
    pub relative_l2: Option<f64>,
    pub config: RunConfig,
}

fn write_json<T: Serialize>(dir: &Path, value: &T) -> Result<()> {
    let path = dir.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(value)?;
    fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn prepare(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

/// Runs `f` on a pool of `workers` threads, or the global pool when `None`.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            Ok(pool.install(f))
        }
    }
}

pub fn build_problem(cfg: &RunConfig) -> Result<Problem> {
    Ok(make_problem(&cfg.benchmark)?)
}

/// Evaluation points: the configured points file, or `n_points` uniform
/// interior points from the run's test-point stream.
pub fn test_points(cfg: &RunConfig, problem: &Problem, stream: &Stream) -> Result<Array2<f64>> {
    match &cfg.points_file {
        Some(path) => read_points(path, problem.dim()),
        None => Ok(problem
            .domain()
            .sample_interior(cfg.n_points, &mut stream.child(tags::TEST_POINTS).rng())?),
    }
}

pub fn read_points(path: &Path, dim: usize) -> Result<Array2<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut flat = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        ensure!(rec.len() == dim, "{}:{}: expected {dim} coordinates, found {}", path.display(), i + 1, rec.len());
        for field in rec.iter() {
            let v: f64 = field
                .parse()
                .with_context(|| format!("{}:{}: bad coordinate {field:?}", path.display(), i + 1))?;
            flat.push(v);
        }
        rows += 1;
    }
    ensure!(rows > 0, "{} holds no points", path.display());
    Ok(Array2::from_shape_vec((rows, dim), flat)?)
}

fn exact_values(problem: &Problem, pts: &Array2<f64>) -> Result<Option<Vec<f64>>> {
    if !problem.has_exact() {
        return Ok(None);
    }
    let vals = pts
        .rows()
        .into_iter()
        .map(|r| problem.exact(r.as_slice().expect("standard layout")))
        .collect::<fracwos_core::Result<Vec<_>>>()?;
    Ok(Some(vals))
}

/// FWoS estimates at every row of `pts`.
pub fn fwos_at(problem: &Problem, pts: &Array2<f64>, s: &FwosSettings, stream: &Stream) -> Result<Vec<PointEstimate>> {
    Ok(fwos_estimate_many(problem, pts, s.n_traj, s.eps, s.k_cap, stream)?)
}

pub fn fwos_stats(est: &[PointEstimate], exact: Option<&[f64]>) -> Result<FwosStats> {
    let tallies: Vec<_> = est.iter().map(|e| e.tally).collect();
    let t = tree_reduce(&tallies);
    let n = t.n.max(1) as f64;
    let relative_l2 = match exact {
        Some(u) => {
            let v: Vec<f64> = est.iter().map(|e| e.value).collect();
            Some(relative_l2_values(&v, u)?)
        }
        None => None,
    };
    Ok(FwosStats {
        relative_l2,
        mean_steps: t.steps as f64 / n,
        non_exited_rate: t.non_exited as f64 / n,
    })
}

/// Surrogate values at every row of `pts`, in batches.
pub fn predict(net: &Surrogate, pts: &Array2<f64>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(pts.nrows());
    let mut start = 0;
    while start < pts.nrows() {
        let end = (start + EVAL_BATCH).min(pts.nrows());
        out.extend(net.forward(pts.slice(s![start..end, ..]))?);
        start = end;
    }
    Ok(out)
}

/// Relative ℓ² error of `net` on `pts`, or `None` without an exact solution.
pub fn surrogate_error(net: &Surrogate, problem: &Problem, pts: &Array2<f64>) -> Result<Option<f64>> {
    match exact_values(problem, pts)? {
        Some(u) => Ok(Some(relative_l2_values(&predict(net, pts)?, &u)?)),
        None => Ok(None),
    }
}

/// Trains with the method's trainer.
pub fn run_trainer(
    problem: &Problem,
    plan: &TrainPlan,
    method: Method,
    stream: &Stream,
    ckpt: Option<Checkpointer>,
) -> Result<TrainReport> {
    Ok(match method {
        Method::Fnwos => train_fnwos(problem, plan, stream, ckpt)?,
        Method::Bfnwos => train_bfnwos(problem, plan, stream, ckpt)?,
        Method::Fwos => bail!("method fwos has no training phase"),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `solve`: FWoS at the test points. Writes `points.csv` and `summary.json`.
pub fn solve(cfg: &RunConfig, out: &Path) -> Result<SolveSummary> {
    ensure!(cfg.method == Method::Fwos, "solve needs method = \"fwos\", found {}", cfg.method);
    let settings = cfg.fwos()?;
    prepare(out)?;
    let t0 = Instant::now();
    let problem = build_problem(cfg)?;
    let stream = Stream::new(cfg.seed);
    let pts = test_points(cfg, &problem, &stream)?;
    let est = fwos_at(&problem, &pts, settings, &stream.child(tags::ESTIMATE))?;
    let exact = exact_values(&problem, &pts)?;
    let stats = fwos_stats(&est, exact.as_deref())?;

    let mut w = csv::Writer::from_path(out.join(POINTS_FILE))?;
    let d = problem.dim();
    let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    header.extend(["estimate", "std_error", "mean_steps", "exact", "abs_error"].map(String::from));
    w.write_record(&header)?;
    for (i, e) in est.iter().enumerate() {
        let mut rec: Vec<String> = pts.row(i).iter().map(|v| v.to_string()).collect();
        let u = exact.as_ref().map(|u| u[i]);
        rec.push(e.value.to_string());
        rec.push(e.std_error().to_string());
        rec.push(e.mean_steps().to_string());
        rec.push(fmt_opt(u));
        rec.push(fmt_opt(u.map(|u| (e.value - u).abs())));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let summary = SolveSummary {
        command: "solve",
        seed: cfg.seed,
        n_points: pts.nrows(),
        stats,
        wall_secs: t0.elapsed().as_secs_f64(),
        config: cfg.clone(),
    };
    write_json(out, &summary)?;
    Ok(summary)
}

fn save_partial(dir: &Path, net: &Surrogate, opt: &OptimizerState) -> fracwos_core::Result<()> {
    // Write then rename so an interrupted flush never leaves a torn file.
    let tmp = dir.join(format!("{PARTIAL_CHECKPOINT_FILE}.tmp"));
    save_checkpoint(net, opt, &tmp)?;
    fs::rename(&tmp, dir.join(PARTIAL_CHECKPOINT_FILE))?;
    Ok(())
}

fn write_train_logs(out: &Path, rep: &TrainReport) -> Result<()> {
    let mut w = csv::Writer::from_path(out.join(TRAIN_LOG_FILE))?;
    for r in &rep.log.iterations {
        w.serialize(r)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join(REFRESH_LOG_FILE))?;
    for r in &rep.log.refreshes {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// `train`: FNWoS or BFNWoS. Writes the final and partial checkpoints, the
/// loss and refresh logs, and `summary.json` with the error at fresh test
/// points.
pub fn train(cfg: &RunConfig, out: &Path) -> Result<TrainSummary> {
    ensure!(
        matches!(cfg.method, Method::Fnwos | Method::Bfnwos),
        "train needs method fnwos or bfnwos, found {}",
        cfg.method
    );
    let plan = cfg.train()?;
    prepare(out)?;
    let problem = build_problem(cfg)?;
    let stream = Stream::new(cfg.seed);
    let mut flush = |_k: u64, net: &Surrogate, opt: &OptimizerState| save_partial(out, net, opt);
    let rep = run_trainer(&problem, plan, cfg.method, &stream, Some(&mut flush))?;
    save_checkpoint(&rep.surrogate, &rep.optimizer, &out.join(CHECKPOINT_FILE))?;
    write_train_logs(out, &rep)?;

    let t0 = Instant::now();
    let pts = test_points(cfg, &problem, &stream)?;
    let relative_l2 = surrogate_error(&rep.surrogate, &problem, &pts)?;
    let eval_secs = t0.elapsed().as_secs_f64();

    let refreshes = &rep.log.refreshes;
    let passes = refreshes.len().max(1) as f64;
    let summary = TrainSummary {
        command: "train",
        method: cfg.method,
        seed: cfg.seed,
        n_points: pts.nrows(),
        relative_l2,
        final_loss: rep.log.iterations.last().map_or(f64::NAN, |r| r.total),
        mean_steps: refreshes.iter().map(|r| r.mean_steps).sum::<f64>() / passes,
        non_exited_rate: refreshes.iter().map(|r| r.non_exited_rate).sum::<f64>() / passes,
        refreshes: refreshes.len().saturating_sub(1),
        sampling_secs: rep.log.sampling_secs,
        training_secs: rep.log.training_secs,
        eval_secs,
        config: cfg.clone(),
    };
    write_json(out, &summary)?;
    Ok(summary)
}

/// Least-squares slope of `ln e` against `ln n`.
pub fn log_log_slope(n: &[usize], e: &[f64]) -> Option<f64> {
    if n.len() < 2 || e.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return None;
    }
    let xs: Vec<f64> = n.iter().map(|&v| (v as f64).ln()).collect();
    let ys: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Some(sxy / sxx)
}

/// `convergence`: FWoS error against the trajectory count.
pub fn convergence(cfg: &RunConfig, out: &Path) -> Result<ConvergenceSummary> {
    ensure!(cfg.method == Method::Fwos, "convergence needs method = \"fwos\", found {}", cfg.method);
    let base = cfg.fwos()?;
    let conv = cfg
        .convergence
        .as_ref()
        .context("convergence needs a [convergence] table with n_list")?;
    prepare(out)?;
    let problem = build_problem(cfg)?;
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    let mut n_points = 0;
    for repeat in 0..cfg.repeats {
        let seed = cfg.seed.wrapping_add(repeat);
        let stream = Stream::new(seed);
        let pts = test_points(cfg, &problem, &stream)?;
        n_points = pts.nrows();
        let exact = exact_values(&problem, &pts)?.context("convergence needs a benchmark with an exact solution")?;
        let mut errs = Vec::new();
        for &n in &conv.n_list {
            let t0 = Instant::now();
            let s = FwosSettings { n_traj: n, ..base.clone() };
            let est = fwos_at(&problem, &pts, &s, &stream.child(tags::ESTIMATE).child(n as u64))?;
            let stats = fwos_stats(&est, Some(&exact))?;
            let err = stats.relative_l2.expect("exact values given");
            errs.push(err);
            rows.push(ConvergenceRow {
                repeat,
                seed,
                n_traj: n,
                relative_l2: err,
                mean_steps: stats.mean_steps,
                non_exited_rate: stats.non_exited_rate,
                secs: t0.elapsed().as_secs_f64(),
            });
        }
        slopes.push(log_log_slope(&conv.n_list, &errs));
    }
    let mut w = csv::Writer::from_path(out.join(CONVERGENCE_FILE))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let summary = ConvergenceSummary {
        command: "convergence",
        seed: cfg.seed,
        n_points,
        slope_skipped: slopes.iter().any(Option::is_none),
        slopes,
        rows,
        config: cfg.clone(),
    };
    write_json(out, &summary)?;
    Ok(summary)
}

/// One ablation arm: BFNWoS with the replacement branch on or off.
pub fn ablation_arm(problem: &Problem, plan: &TrainPlan, replacement: bool, stream: &Stream) -> Result<TrainReport> {
    let plan = TrainPlan {
        replacement,
        ..plan.clone()
    };
    run_trainer(problem, &plan, Method::Bfnwos, stream, None)
}

/// `ablation`: BFNWoS with and without replacement at identical budgets and
/// streams, over `repeats` seeds.
pub fn ablation(cfg: &RunConfig, out: &Path) -> Result<AblationSummary> {
    ensure!(cfg.method == Method::Bfnwos, "ablation needs method = \"bfnwos\", found {}", cfg.method);
    let plan = cfg.train()?;
    prepare(out)?;
    let problem = build_problem(cfg)?;
    let mut rows = Vec::new();
    let mut n_points = 0;
    for repeat in 0..cfg.repeats {
        let seed = cfg.seed.wrapping_add(repeat);
        let stream = Stream::new(seed);
        let pts = test_points(cfg, &problem, &stream)?;
        n_points = pts.nrows();
        for replacement in [true, false] {
            let rep = ablation_arm(&problem, plan, replacement, &stream)?;
            rows.push(AblationRow {
                repeat,
                seed,
                replacement,
                relative_l2: surrogate_error(&rep.surrogate, &problem, &pts)?,
                sampling_secs: rep.log.sampling_secs,
                training_secs: rep.log.training_secs,
            });
        }
    }
    let mut w = csv::Writer::from_path(out.join(ABLATION_FILE))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let summary = AblationSummary {
        command: "ablation",
        seed: cfg.seed,
        n_points,
        rows,
        config: cfg.clone(),
    };
    write_json(out, &summary)?;
    Ok(summary)
}

/// `eval-checkpoint`: surrogate values and errors at the test points.
pub fn eval_checkpoint(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<EvalSummary> {
    prepare(out)?;
    let (net, opt) = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let problem = build_problem(cfg)?;
    let arch = net.architecture();
    ensure!(
        arch.input_dim == problem.dim(),
        "checkpoint expects {} inputs but the benchmark has dimension {}",
        arch.input_dim,
        problem.dim()
    );
    let stream = Stream::new(cfg.seed);
    let pts = test_points(cfg, &problem, &stream)?;
    let v = predict(&net, &pts)?;
    let exact = exact_values(&problem, &pts)?;

    let mut w = csv::Writer::from_path(out.join(POINTS_FILE))?;
    let mut header: Vec<String> = (0..problem.dim()).map(|i| format!("x{i}")).collect();
    header.extend(["prediction", "exact", "abs_error"].map(String::from));
    w.write_record(&header)?;
    for (i, &p) in v.iter().enumerate() {
        let mut rec: Vec<String> = pts.row(i).iter().map(|x| x.to_string()).collect();
        let u = exact.as_ref().map(|u| u[i]);
        rec.push(p.to_string());
        rec.push(fmt_opt(u));
        rec.push(fmt_opt(u.map(|u| (p - u).abs())));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let relative_l2 = match &exact {
        Some(u) => Some(relative_l2_values(&v, u)?),
        None => None,
    };
    let summary = EvalSummary {
        command: "eval-checkpoint",
        checkpoint: checkpoint.to_path_buf(),
        step: opt.step,
        seed: cfg.seed,
        n_points: pts.nrows(),
        relative_l2,
        config: cfg.clone(),
    };
    write_json(out, &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_power_law() {
        let n = [100, 1000, 10_000];
        let e: Vec<f64> = n.iter().map(|&v| 3.0 * (v as f64).powf(-0.5)).collect();
        assert!((log_log_slope(&n, &e).unwrap() + 0.5).abs() < 1e-12);
        assert_eq!(log_log_slope(&n, &[0.0, 0.0, 0.0]), None);
    }
}
