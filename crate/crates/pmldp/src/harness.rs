//! Monte-Carlo experiments.
//!
//! Every estimate is a deterministic function of (parameters, seed): path
//! index p always draws the stream keyed by (seed, p), path batches map in
//! index order through [`crate::exec::map_indexed`], and reductions run over
//! the ordered result vector, so reruns and different worker counts reproduce
//! results bit for bit. Comparisons of two processes always consume a single
//! `WienerPath` object, which couples them on the same noise by construction.
//! Blow-up paths are tallied separately; more than 1% of them fails the run.

use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::model::ModelSpec;
use crate::noise::{mix_seed, qw_trajectory, sample_path, NoiseSpec};
use crate::solver::{solve_pl_noise, solve_projected, solve_short_time, solve_spde, Trajectory};
use crate::spaces::{norm_h, norm_lp, Discretization, Field};

const MAX_BLOWUP_FRACTION: f64 = 0.01;

/// Hit-count estimate with a 95% Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_paths: usize,
    pub n_hits: usize,
    pub n_blowups: usize,
}

/// 95% Wilson score interval for `hits` successes out of `n`.
pub fn wilson_interval(hits: usize, n: usize) -> (f64, f64) {
    let z = 1.959963984540054f64;
    let n = n as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

fn estimate_from_counts(hits: usize, successes: usize, blowups: usize) -> McEstimate {
    let (lo, hi) = wilson_interval(hits, successes);
    McEstimate {
        p_hat: hits as f64 / successes as f64,
        ci_low: lo,
        ci_high: hi,
        n_paths: successes,
        n_hits: hits,
        n_blowups: blowups,
    }
}

/// Outcome of one path: a payload or a recorded blow-up.
enum PathOutcome<T> {
    Value(T),
    BlowUp,
}

/// Maps a per-path closure over `n_paths` streams, tallying blow-ups and
/// failing the run when they exceed the quota.
fn run_paths<T, F>(n_paths: usize, f: F) -> Result<(Vec<T>, usize)>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let raw = map_indexed(n_paths, |p| match f(p as u64) {
        Ok(v) => Ok(PathOutcome::Value(v)),
        Err(Error::BlowUp { .. }) => Ok(PathOutcome::BlowUp),
        Err(e) => Err(e),
    });
    let mut values = Vec::with_capacity(n_paths);
    let mut blowups = 0usize;
    for r in raw {
        match r? {
            PathOutcome::Value(v) => values.push(v),
            PathOutcome::BlowUp => blowups += 1,
        }
    }
    if (blowups as f64) > MAX_BLOWUP_FRACTION * n_paths as f64 {
        return Err(Error::Numerical(format!(
            "{blowups} of {n_paths} paths blew up (quota 1%)"
        )));
    }
    Ok((values, blowups))
}

/// Fraction of small-noise paths whose endpoint lands in the H-ball of
/// radius `delta` around `target`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_ball_probability(
    spec: &ModelSpec,
    ns: &NoiseSpec,
    x0: &Field,
    target: &Field,
    delta: f64,
    eps: f64,
    n_paths: usize,
    seed: u64,
    d: &Discretization,
) -> Result<McEstimate> {
    if n_paths < 100 {
        return Err(Error::InvalidParameter(format!(
            "ball probability needs n_paths >= 100, got {n_paths}"
        )));
    }
    if !(delta >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "delta must be >= 0, got {delta}"
        )));
    }
    let (hits, blowups) = run_paths(n_paths, |p| {
        let w = sample_path(ns, d, seed, p);
        let traj = solve_spde(spec, ns, x0, eps, &w, d)?;
        let dist = norm_h(&traj.endpoint().sub(target), d)?;
        Ok(dist <= delta)
    })?;
    let successes = hits.len();
    let n_hits = hits.iter().filter(|h| **h).count();
    Ok(estimate_from_counts(n_hits, successes, blowups))
}

/// Least-squares line through (x_i, y_i); returns (slope, intercept, r^2).
pub(crate) fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    (slope, intercept, r2)
}

/// Regression of log p against 1/eps^2 over the admissible points.
#[derive(Debug, Clone)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Admitted (eps, log p) pairs that entered the fit.
    pub points: Vec<(f64, f64)>,
    /// All per-eps estimates, admitted or not, for reporting.
    pub estimates: Vec<(f64, McEstimate)>,
}

/// Ball-probability slope over an eps grid. Points need at least 5 hits to
/// be admitted; fewer than 3 admissible points is an error (the event is too
/// rare at this depth; enlarge delta or eps).
#[allow(clippy::too_many_arguments)]
pub fn ldp_slope(
    spec: &ModelSpec,
    ns: &NoiseSpec,
    x0: &Field,
    target: &Field,
    delta: f64,
    eps_list: &[f64],
    n_paths: usize,
    seed: u64,
    d: &Discretization,
) -> Result<SlopeFit> {
    if eps_list.len() < 3 {
        return Err(Error::InvalidParameter(
            "slope regression needs at least 3 eps values".into(),
        ));
    }
    let mut estimates = Vec::with_capacity(eps_list.len());
    for (idx, &eps) in eps_list.iter().enumerate() {
        let sub_seed = mix_seed(seed, idx as u64);
        let est =
            estimate_ball_probability(spec, ns, x0, target, delta, eps, n_paths, sub_seed, d)?;
        estimates.push((eps, est));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut points = Vec::new();
    for (eps, est) in &estimates {
        if est.n_hits >= 5 {
            let x = 1.0 / (eps * eps);
            let y = (est.p_hat).ln();
            xs.push(x);
            ys.push(y);
            points.push((*eps, y));
        }
    }
    if points.len() < 3 {
        return Err(Error::Numerical(format!(
            "only {} of {} eps points had >= 5 hits; enlarge delta or eps",
            points.len(),
            eps_list.len()
        )));
    }
    let (slope, intercept, r_squared) = linear_fit(&xs, &ys);
    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
        points,
        estimates,
    })
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Exponential-moment diagnostic per eps:
/// e_hat = eps^2 log (1/n sum_paths exp(gamma eps^{-2} int ||X||_{r+1}^{r+1} dt)),
/// accumulated through log-sum-exp so large exponents never overflow.
#[allow(clippy::too_many_arguments)]
pub fn check_exp_estimate(
    spec: &ModelSpec,
    ns: &NoiseSpec,
    x0: &Field,
    gamma: f64,
    eps_list: &[f64],
    n_paths: usize,
    seed: u64,
    d: &Discretization,
) -> Result<Vec<(f64, f64)>> {
    if !(gamma >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma must be >= 0, got {gamma}"
        )));
    }
    let p = spec.r + 1.0;
    let mut out = Vec::with_capacity(eps_list.len());
    for (idx, &eps) in eps_list.iter().enumerate() {
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter("eps must be positive here".into()));
        }
        let sub_seed = mix_seed(seed, idx as u64);
        let (exponents, _blowups) = run_paths(n_paths, |path| {
            let w = sample_path(ns, d, sub_seed, path);
            let traj = solve_spde(spec, ns, x0, eps, &w, d)?;
            Ok(gamma / (eps * eps) * traj.integral_lp_pow(p)?)
        })?;
        if exponents.is_empty() {
            return Err(Error::Numerical("no surviving paths".into()));
        }
        let e_hat = eps * eps * (log_sum_exp(&exponents) - (exponents.len() as f64).ln());
        out.push((eps, e_hat));
    }
    Ok(out)
}

/// Which approximation index a row of [`approx_error_probabilities`] sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    /// Spectral truncation rank n (projected noise vs full noise).
    Modes,
    /// Interpolation node count N (piecewise-linear noise vs projected).
    Interp,
}

impl std::fmt::Display for Sweep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Sweep::Modes => write!(f, "n"),
            Sweep::Interp => write!(f, "N"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ApproxErrorRow {
    pub sweep: Sweep,
    pub index: usize,
    /// Exceedance estimate P(sup-H distance > delta).
    pub exceed: McEstimate,
    /// Median of the coupled sup-H distances.
    pub median_dist: f64,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Coupled approximation-error sweeps: distances between the full and
/// spectrally projected dynamics over n, and between the projected and
/// piecewise-linear-noise dynamics over N, both on shared Wiener paths.
#[allow(clippy::too_many_arguments)]
pub fn approx_error_probabilities(
    spec: &ModelSpec,
    ns: &NoiseSpec,
    x0: &Field,
    eps: f64,
    delta: f64,
    mode_list: &[usize],
    interp_list: &[usize],
    n_paths: usize,
    seed: u64,
    d: &Discretization,
) -> Result<Vec<ApproxErrorRow>> {
    if mode_list.is_empty() || interp_list.is_empty() {
        return Err(Error::InvalidParameter(
            "sweep lists must be nonempty".into(),
        ));
    }
    for &n in mode_list {
        if n > ns.n_modes() {
            return Err(Error::InvalidParameter(format!(
                "sweep rank {n} exceeds n_modes = {}",
                ns.n_modes()
            )));
        }
    }
    for &n_sub in interp_list {
        if n_sub == 0 || d.n_steps() % n_sub != 0 {
            return Err(Error::InvalidParameter(format!(
                "interpolation count {n_sub} must divide K = {}",
                d.n_steps()
            )));
        }
    }

    // One coupled comparison per path: the same WienerPath object drives both
    // solves of every pair.
    let full_rank = ns.n_modes();
    let distances: Result<(Vec<Vec<f64>>, usize)> = run_paths(n_paths, |p| {
        let w = sample_path(ns, d, seed, p);
        let full = solve_spde(spec, ns, x0, eps, &w, d)?;
        let mut row = Vec::with_capacity(mode_list.len() + interp_list.len());
        for &n in mode_list {
            let proj = solve_projected(spec, ns, x0, eps, n, &w, d)?;
            row.push(full.sup_distance_h(&proj)?);
        }
        let reference = solve_projected(spec, ns, x0, eps, full_rank, &w, d)?;
        for &n_sub in interp_list {
            let pl = solve_pl_noise(spec, ns, x0, eps, full_rank, n_sub, &w, d)?;
            row.push(reference.sup_distance_h(&pl)?);
        }
        Ok(row)
    });
    let (rows, blowups) = distances?;
    let successes = rows.len();
    if successes == 0 {
        return Err(Error::Numerical("no surviving paths".into()));
    }

    let mut out = Vec::new();
    for (col, &index) in mode_list.iter().chain(interp_list.iter()).enumerate() {
        let mut dists: Vec<f64> = rows.iter().map(|r| r[col]).collect();
        let hits = dists.iter().filter(|v| **v > delta).count();
        dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        out.push(ApproxErrorRow {
            sweep: if col < mode_list.len() {
                Sweep::Modes
            } else {
                Sweep::Interp
            },
            index,
            exceed: estimate_from_counts(hits, successes, blowups),
            median_dist: median(&dists),
        });
    }
    Ok(out)
}

/// Quantiles of the coupled short-time gap sup_t ||X~_t - x0 - eps Q W_t||_H.
#[derive(Debug, Clone, Copy)]
pub struct ShortTimeRow {
    pub eps: f64,
    pub q50: f64,
    pub q90: f64,
    pub q99: f64,
    pub n_paths: usize,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

/// Gap between the short-time dynamics and its pure-noise shadow, per eps.
pub fn short_time_gap(
    spec: &ModelSpec,
    ns: &NoiseSpec,
    x0: &Field,
    eps_list: &[f64],
    n_paths: usize,
    seed: u64,
    d: &Discretization,
) -> Result<Vec<ShortTimeRow>> {
    // x0 in L^{r+1}(m) holds automatically on the mesh; checked for fidelity.
    let _ = norm_lp(x0, spec.r + 1.0, d)?;
    let mut out = Vec::with_capacity(eps_list.len());
    for (idx, &eps) in eps_list.iter().enumerate() {
        let sub_seed = mix_seed(seed, idx as u64);
        let (mut gaps, _blow) = run_paths(n_paths, |p| {
            let w = sample_path(ns, d, sub_seed, p);
            let xt = solve_short_time(spec, ns, x0, eps, &w, d)?;
            let shadow = qw_trajectory(ns, &w, eps, d)?;
            coupled_short_time_gap(&xt, &shadow, x0, d)
        })?;
        if gaps.is_empty() {
            return Err(Error::Numerical("no surviving paths".into()));
        }
        gaps.sort_by(|a, b| a.partial_cmp(b).expect("finite gaps"));
        out.push(ShortTimeRow {
            eps,
            q50: quantile(&gaps, 0.5),
            q90: quantile(&gaps, 0.9),
            q99: quantile(&gaps, 0.99),
            n_paths: gaps.len(),
        });
    }
    Ok(out)
}

/// sup over the grid of ||X~_t - x0 - (eps Q W)_t||_H for one coupled pair.
fn coupled_short_time_gap(
    xt: &Trajectory,
    shadow: &Trajectory,
    x0: &Field,
    d: &Discretization,
) -> Result<f64> {
    let mut sup = 0.0f64;
    for i in 0..xt.len() {
        let mut diff = xt.state(i).sub(shadow.state(i));
        diff.axpy(-1.0, x0);
        sup = sup.max(norm_h(&diff, d)?);
    }
    Ok(sup)
}
