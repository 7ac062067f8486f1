//! Error metrics (convergence and tracking), Monte-Carlo variance
//! estimation of pseudo-gradient updates, and percentile-envelope
//! aggregation across repetitions.

use serde::{Deserialize, Serialize};

use crate::algorithms::{EpochRecord, UpdateSnapshot};
use crate::error::{Error, Result};
use crate::numerics::{dot, norm, solve_linear, sub, Vector};
use crate::stats::{ExactMoments, SampleStats};

/// One recorded point of a run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TracePoint {
    pub pg_count: u64,
    pub conv_error: f64,
    pub tracking_error_sq: f64,
}

/// Run identification carried alongside a trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceMeta {
    pub algo: String,
    pub alpha: f64,
    pub beta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub instance_id: String,
}

/// Output record of one algorithm run: error curves keyed by cumulative
/// pseudo-gradient count, per-epoch anchors, and run-level invariant
/// witnesses (worst update norms and worst SVRG anchor-identity gap).
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub points: Vec<TracePoint>,
    pub epochs: Vec<EpochRecord>,
    /// Largest corrected theta-update norm seen anywhere in the run.
    pub max_theta_update: f64,
    /// Largest corrected w-update norm seen anywhere in the run.
    pub max_w_update: f64,
    /// Largest deviation of the corrected update at the anchor from the
    /// batch pseudo-gradient (exact cancellation up to rounding).
    pub anchor_gap_max: f64,
    pub meta: TraceMeta,
}

/// Percentile envelope over repetitions, on a shared count grid.
#[derive(Debug, Clone)]
pub struct Envelope {
    pub grid: Vec<u64>,
    pub p5: Vec<f64>,
    pub p50: Vec<f64>,
    pub p95: Vec<f64>,
}

/// Monte-Carlo update-variance estimate (trace of the empirical covariance).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub var_theta_update: f64,
    pub var_w_update: f64,
}

/// Convergence error || theta - theta* ||.
pub fn convergence_error(theta: &[f64], theta_star: &[f64]) -> f64 {
    norm(&sub(theta, theta_star))
}

/// Squared tracking error || w + C^{-1}(b + A theta) ||^2.
pub fn tracking_error_sq(theta: &[f64], w: &[f64], m: &ExactMoments) -> Result<f64> {
    let b_plus_a_theta: Vector =
        m.a.mul_vec(theta).iter().zip(&m.b).map(|(x, y)| x + y).collect();
    let c_inv_term = solve_linear(&m.c, &b_plus_a_theta).map_err(|_| Error::SingularC)?;
    let z: Vector = w.iter().zip(&c_inv_term).map(|(x, y)| x + y).collect();
    Ok(dot(&z, &z))
}

/// Monte-Carlo estimate of the per-step update variance.
///
/// Draws `n_mc` fresh samples from the provided source (which never touches
/// algorithm state), evaluates the snapshot's corrected update on each, and
/// returns the trace of the empirical covariance for the theta- and
/// w-updates separately.
pub fn mc_update_variance(
    snapshot: &UpdateSnapshot,
    mut fresh_sample: impl FnMut() -> SampleStats,
    n_mc: usize,
) -> VarianceEstimate {
    assert!(n_mc >= 2, "variance needs at least two samples");
    let d = snapshot.theta.len();
    let mut sum_t = vec![0.0; d];
    let mut sumsq_t = vec![0.0; d];
    let mut sum_w = vec![0.0; d];
    let mut sumsq_w = vec![0.0; d];
    for _ in 0..n_mc {
        let s = fresh_sample();
        let (u_theta, u_w) = snapshot.update_directions(&s);
        for i in 0..d {
            sum_t[i] += u_theta[i];
            sumsq_t[i] += u_theta[i] * u_theta[i];
            sum_w[i] += u_w[i];
            sumsq_w[i] += u_w[i] * u_w[i];
        }
    }
    let n = n_mc as f64;
    let trace_var = |sum: &[f64], sumsq: &[f64]| -> f64 {
        sum.iter()
            .zip(sumsq)
            .map(|(s, sq)| ((sq - s * s / n) / (n - 1.0)).max(0.0))
            .sum()
    };
    VarianceEstimate {
        var_theta_update: trace_var(&sum_t, &sumsq_t),
        var_w_update: trace_var(&sum_w, &sumsq_w),
    }
}

/// Piecewise-constant (last value carried forward) lookup of a trace on a
/// count grid. Counts before the first point carry the first value back.
fn sample_on_grid(points: &[TracePoint], grid: &[u64], metric: impl Fn(&TracePoint) -> f64) -> Vector {
    let mut out = Vec::with_capacity(grid.len());
    let mut idx = 0usize;
    for &g in grid {
        while idx + 1 < points.len() && points[idx + 1].pg_count <= g {
            idx += 1;
        }
        out.push(metric(&points[idx]));
    }
    out
}

/// Nearest-rank percentile (lower tie): element at rank ceil(p/100 * n).
fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

/// Aggregate traces into p5/p50/p95 envelopes on a shared count grid.
pub fn aggregate_envelope(
    traces: &[RunTrace],
    grid: &[u64],
    metric: impl Fn(&TracePoint) -> f64 + Copy,
) -> Result<Envelope> {
    if traces.is_empty() {
        return Err(Error::InvalidParams("aggregate_envelope needs at least one trace".into()));
    }
    let rows: Vec<Vector> = traces
        .iter()
        .map(|t| sample_on_grid(&t.points, grid, metric))
        .collect();
    let mut p5 = Vec::with_capacity(grid.len());
    let mut p50 = Vec::with_capacity(grid.len());
    let mut p95 = Vec::with_capacity(grid.len());
    for j in 0..grid.len() {
        let mut col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        col.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
        p5.push(nearest_rank(&col, 5.0));
        p50.push(nearest_rank(&col, 50.0));
        p95.push(nearest_rank(&col, 95.0));
    }
    Ok(Envelope { grid: grid.to_vec(), p5, p50, p95 })
}

/// Uniform count grid from 0 to the largest recorded count across traces.
pub fn default_grid(traces: &[RunTrace], points: usize) -> Vec<u64> {
    let max = traces
        .iter()
        .filter_map(|t| t.points.last())
        .map(|p| p.pg_count)
        .max()
        .unwrap_or(0);
    let points = points.max(2) as u64;
    (0..points).map(|i| max * i / (points - 1)).collect()
}
