//! Experiment orchestration behind the `pmldp` binary.
//!
//! `run` executes the configured experiment and writes one CSV, prefixed by a
//! `#` manifest (artifact version, config hash, seed, column schema) that
//! downstream tooling parses back. Exit codes are the process-level contract:
//! 0 success, 1 validation failure, 2 numerical failure. Output bytes depend
//! only on (config, seed), never on the worker count.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{
    config_hash, load_config, resolve, DrivingMode, ExperimentConfig, Kind, Resolved,
};
use crate::error::{Error, Result};
use crate::harness::{approx_error_probabilities, check_exp_estimate, ldp_slope, short_time_gap};
use crate::model::validate_model;
use crate::noise::{hs_norm_sq, sample_path, Control};
use crate::rate::{rate_endpoint, RateOpts, RateValue};
use crate::solver::{solve_skeleton, solve_spde, Driving, Trajectory};
use crate::spaces::Field;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Default, Clone)]
pub struct RunOptions {
    pub sets: Vec<String>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Loads, validates and executes a config; writes the CSV to the configured
/// output path (stdout when none).
pub fn run(config_path: &Path, opts: &RunOptions) -> Result<()> {
    let mut config = load_config(config_path, &opts.sets)?;
    if let Some(seed) = opts.seed {
        config.seed = seed;
    }
    if let Some(out) = &opts.out {
        config.output = Some(out.display().to_string());
    }
    let resolved = resolve(&config)?;
    let (csv, failure) = with_workers(opts.workers, || execute(&resolved))??;
    match &resolved.config.output {
        Some(path) => std::fs::write(path, &csv)?,
        None => print!("{csv}"),
    }
    match failure {
        Some(msg) => Err(Error::Config(msg)),
        None => Ok(()),
    }
}

/// Prints resolved parameters, the discrete spectral gap, the noise strength,
/// the admissibility gate and a cost estimate, without running anything.
pub fn describe(config_path: &Path, sets: &[String]) -> Result<String> {
    let config = load_config(config_path, sets)?;
    let resolved = resolve(&config)?;
    let d = &resolved.d;
    let ns = &resolved.noise;
    let m = &resolved.model;
    let mut out = String::new();
    writeln!(out, "pmldp v{VERSION}").ok();
    writeln!(out, "kind = {}", resolved.kind()).ok();
    writeln!(out, "seed = {}", resolved.seed()).ok();
    writeln!(
        out,
        "grid: M = {}, h = {}, K = {}, dt = {}, T = {}",
        d.n_points(),
        d.h(),
        d.n_steps(),
        d.dt(),
        d.t_final()
    )
    .ok();
    writeln!(
        out,
        "lambda0 = {} (discrete spectral gap of -L)",
        d.lambda0()
    )
    .ok();
    writeln!(
        out,
        "model: r = {}, theta1 = {}, theta2 = {}, sigma = {}, psi = {:?}, phi = {:?}, drift_multiplier = {}",
        m.r, m.theta1, m.theta2, m.sigma, m.psi_form, m.phi_form, m.drift_multiplier
    )
    .ok();
    let hs = hs_norm_sq(ns, d)?;
    writeln!(
        out,
        "noise: n_modes = {}, q = {:?}, q(Q) = {}",
        ns.n_modes(),
        ns.multipliers(),
        hs
    )
    .ok();
    if ns.multipliers().iter().all(|q| *q == 0.0) {
        writeln!(
            out,
            "warning: degenerate noise (q = 0): rate functionals are infinite off the deterministic path"
        )
        .ok();
    }
    let b = crate::model::op_norm_inv_l(d, m.r, resolved.seed());
    let gate = m.theta1 > m.theta2 * b;
    writeln!(
        out,
        "admissibility gate: theta1 = {} vs theta2 * ||(-L)^-1||_(r+1) = {} -> {}",
        m.theta1,
        m.theta2 * b,
        if gate { "ok" } else { "VIOLATED" }
    )
    .ok();
    writeln!(
        out,
        "estimated cost: ~{} implicit solves (~3 Newton iterations each)",
        estimated_steps(&resolved)
    )
    .ok();
    Ok(out)
}

#[cfg(feature = "parallel")]
fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        Some(n) if n > 0 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
            Ok(pool.install(f))
        }
        _ => Ok(f()),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_workers<T>(workers: Option<usize>, f: impl FnOnce() -> T) -> Result<T> {
    let _ = workers;
    Ok(f())
}

fn estimated_steps(resolved: &Resolved) -> u128 {
    let e = &resolved.config.experiment;
    let k = resolved.d.n_steps() as u128;
    let n_paths = e.n_paths.unwrap_or(0) as u128;
    match resolved.kind() {
        Kind::Simulate | Kind::Skeleton => k,
        Kind::Rate => {
            let p = (e.n_ctrl_modes.unwrap_or(3) * e.n_ctrl_times.unwrap_or(8)) as u128;
            5 * 80 * (2 * p + 4) * k
        }
        Kind::LdpSlope => e.eps.len() as u128 * n_paths * k,
        Kind::ExpEstimate => {
            e.gamma.as_ref().map_or(1, |g| g.len()) as u128 * e.eps.len() as u128 * n_paths * k
        }
        Kind::ApproxErrors => {
            let sweeps = (e.modes_list.as_ref().map_or(0, |l| l.len())
                + e.interp_list.as_ref().map_or(0, |l| l.len())
                + 2) as u128;
            n_paths * sweeps * k
        }
        Kind::ShortTime => 2 * e.eps.len() as u128 * n_paths * k,
        Kind::ValidateModel => e.sample_count.unwrap_or(1000) as u128,
    }
}

fn fmt_f(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        }
    } else {
        format!("{v}")
    }
}

fn manifest(config: &ExperimentConfig, schema: &str) -> String {
    format!(
        "# pmldp v{VERSION}\n# config_hash = {}\n# seed = {}\n# kind = {}\n# schema = {}\n",
        config_hash(config),
        config.seed,
        config.experiment.kind,
        schema
    )
}

fn trajectory_rows(traj: &Trajectory, out: &mut String) {
    let d = traj.discretization();
    for i in 0..traj.len() {
        let t = i as f64 * d.dt();
        out.push_str(&fmt_f(t));
        for v in traj.state(i).values() {
            out.push(',');
            out.push_str(&fmt_f(*v));
        }
        out.push('\n');
    }
}

/// Runs the experiment selected by the resolved config and renders its CSV.
/// The optional second value is a named validation failure to surface as exit
/// code 1 after the CSV is written; hard numerical errors propagate as `Err`.
pub fn execute(resolved: &Resolved) -> Result<(String, Option<String>)> {
    let config = &resolved.config;
    let e = &config.experiment;
    let d = &resolved.d;
    let model = &resolved.model;
    let noise = &resolved.noise;
    let x0 = &resolved.x0;
    let seed = resolved.seed();

    match resolved.kind() {
        Kind::Simulate => {
            let eps = e.eps[0];
            let w = sample_path(noise, d, seed, 0);
            let traj = solve_spde(model, noise, x0, eps, &w, d)?;
            let schema = trajectory_schema(d.n_points());
            let mut out = manifest(config, &schema);
            out.push_str(&schema);
            out.push('\n');
            trajectory_rows(&traj, &mut out);
            Ok((out, None))
        }
        Kind::Skeleton => {
            let ctrl = match &e.control {
                Some(modes) => Control::constant(modes, d.n_steps(), noise.n_modes())?,
                None => Control::zeros(d.n_steps(), noise.n_modes()),
            };
            let driving = match e.driving {
                Some(DrivingMode::Raw) => Driving::Raw,
                _ => Driving::QPhi,
            };
            let traj = solve_skeleton(model, noise, x0, &ctrl, driving, d)?;
            let schema = trajectory_schema(d.n_points());
            let mut out = manifest(config, &schema);
            out.push_str(&schema);
            out.push('\n');
            trajectory_rows(&traj, &mut out);
            Ok((out, None))
        }
        Kind::Rate => {
            let target = resolved.field_from_modes(e.target.as_ref().expect("validated"))?;
            let opts = rate_opts(resolved);
            let res = rate_endpoint(
                model,
                noise,
                x0,
                &target,
                e.delta_constraint.unwrap_or(0.0),
                &opts,
                d,
            )?;
            let schema = "record,step,mode,value";
            let mut out = manifest(config, schema);
            out.push_str(schema);
            out.push('\n');
            let value_str = match res.value {
                RateValue::Finite(v) => fmt_f(v),
                RateValue::Infinite => "inf".to_string(),
            };
            writeln!(out, "value,,,{value_str}").ok();
            writeln!(out, "residual,,,{}", fmt_f(res.residual)).ok();
            writeln!(out, "iterations,,,{}", res.iterations).ok();
            writeln!(out, "feasible,,,{}", u8::from(!res.value.is_infinite())).ok();
            if let Some(ctrl) = &res.argmin {
                for i in 0..ctrl.n_steps() {
                    for k in 0..ctrl.n_modes() {
                        writeln!(out, "coeff,{i},{},{}", k + 1, fmt_f(ctrl.get(i, k))).ok();
                    }
                }
            }
            let failure = if res.value.is_infinite() {
                Some(format!(
                    "rate-endpoint infeasible: residual {} exceeds tolerance {}",
                    res.residual, opts.constraint_tol
                ))
            } else {
                None
            };
            Ok((out, failure))
        }
        Kind::LdpSlope => {
            let target = slope_target(resolved)?;
            let fit = ldp_slope(
                model,
                noise,
                x0,
                &target,
                e.delta.expect("validated"),
                &e.eps,
                e.n_paths.expect("validated"),
                seed,
                d,
            )?;
            let schema = "record,eps,inv_eps_sq,n_paths,n_hits,n_blowups,p_hat,ci_low,ci_high,log_p,admitted,slope,intercept,r_squared";
            let mut out = manifest(config, schema);
            out.push_str(schema);
            out.push('\n');
            for (eps, est) in &fit.estimates {
                let admitted = u8::from(est.n_hits >= 5);
                writeln!(
                    out,
                    "point,{},{},{},{},{},{},{},{},{},{admitted},,,",
                    fmt_f(*eps),
                    fmt_f(1.0 / (eps * eps)),
                    est.n_paths,
                    est.n_hits,
                    est.n_blowups,
                    fmt_f(est.p_hat),
                    fmt_f(est.ci_low),
                    fmt_f(est.ci_high),
                    fmt_f(est.p_hat.ln()),
                )
                .ok();
            }
            writeln!(
                out,
                "fit,,,,,,,,,,,{},{},{}",
                fmt_f(fit.slope),
                fmt_f(fit.intercept),
                fmt_f(fit.r_squared)
            )
            .ok();
            Ok((out, None))
        }
        Kind::ExpEstimate => {
            let schema = "gamma,eps,e_hat,n_paths";
            let mut out = manifest(config, schema);
            out.push_str(schema);
            out.push('\n');
            let n_paths = e.n_paths.expect("validated");
            for &gamma in e.gamma.as_ref().expect("validated") {
                let rows = check_exp_estimate(model, noise, x0, gamma, &e.eps, n_paths, seed, d)?;
                for (eps, e_hat) in rows {
                    writeln!(
                        out,
                        "{},{},{},{n_paths}",
                        fmt_f(gamma),
                        fmt_f(eps),
                        fmt_f(e_hat)
                    )
                    .ok();
                }
            }
            Ok((out, None))
        }
        Kind::ApproxErrors => {
            let rows = approx_error_probabilities(
                model,
                noise,
                x0,
                e.eps[0],
                e.delta.expect("validated"),
                e.modes_list.as_ref().expect("validated"),
                e.interp_list.as_ref().expect("validated"),
                e.n_paths.expect("validated"),
                seed,
                d,
            )?;
            let schema = "sweep,index,n_paths,n_exceed,p_hat,ci_low,ci_high,median_dist,n_blowups";
            let mut out = manifest(config, schema);
            out.push_str(schema);
            out.push('\n');
            for row in rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    row.sweep,
                    row.index,
                    row.exceed.n_paths,
                    row.exceed.n_hits,
                    fmt_f(row.exceed.p_hat),
                    fmt_f(row.exceed.ci_low),
                    fmt_f(row.exceed.ci_high),
                    fmt_f(row.median_dist),
                    row.exceed.n_blowups
                )
                .ok();
            }
            Ok((out, None))
        }
        Kind::ShortTime => {
            let rows = short_time_gap(
                model,
                noise,
                x0,
                &e.eps,
                e.n_paths.expect("validated"),
                seed,
                d,
            )?;
            let schema = "eps,n_paths,q50,q90,q99,ratio90";
            let mut out = manifest(config, schema);
            out.push_str(schema);
            out.push('\n');
            for row in rows {
                let ratio = if row.eps > 0.0 {
                    fmt_f(row.q90 / row.eps)
                } else {
                    String::new()
                };
                writeln!(
                    out,
                    "{},{},{},{},{},{ratio}",
                    fmt_f(row.eps),
                    row.n_paths,
                    fmt_f(row.q50),
                    fmt_f(row.q90),
                    fmt_f(row.q99)
                )
                .ok();
            }
            Ok((out, None))
        }
        Kind::ValidateModel => {
            let report = validate_model(model, d, e.sample_count.unwrap_or(1000), seed)?;
            let schema = "metric,value";
            let mut out = manifest(config, schema);
            out.push_str(schema);
            out.push('\n');
            writeln!(out, "empirical_theta1,{}", fmt_f(report.empirical_theta1)).ok();
            writeln!(out, "theta2_hat,{}", fmt_f(report.theta2_hat)).ok();
            writeln!(out, "sigma_hat,{}", fmt_f(report.sigma_hat)).ok();
            writeln!(out, "alpha_hat,{}", fmt_f(report.monotonicity_alpha_hat)).ok();
            writeln!(out, "c_hat,{}", fmt_f(report.monotonicity_c_hat)).ok();
            writeln!(out, "op_norm_inv_l,{}", fmt_f(report.op_norm_inv_l)).ok();
            writeln!(out, "gate_ok,{}", u8::from(report.gate_ok)).ok();
            writeln!(out, "samples,{}", report.samples).ok();
            writeln!(out, "pass,{}", u8::from(report.pass)).ok();
            let failure = if report.pass {
                None
            } else {
                Some(format!(
                    "model validation failed: {}",
                    report.failures.join("; ")
                ))
            };
            Ok((out, failure))
        }
    }
}

fn trajectory_schema(m: usize) -> String {
    let mut s = String::from("t");
    for j in 1..=m {
        write!(s, ",x{j}").ok();
    }
    s
}

fn rate_opts(resolved: &Resolved) -> RateOpts {
    let e = &resolved.config.experiment;
    let mut opts = RateOpts::default();
    opts.n_ctrl_modes = e
        .n_ctrl_modes
        .unwrap_or_else(|| opts.n_ctrl_modes.min(resolved.noise.n_modes()));
    if let Some(nt) = e.n_ctrl_times {
        opts.n_ctrl_times = nt;
    }
    opts
}

/// Target of a slope experiment: an explicit field, or the skeleton endpoint
/// of the planted control.
fn slope_target(resolved: &Resolved) -> Result<Field> {
    let e = &resolved.config.experiment;
    if let Some(target) = &e.target {
        return resolved.field_from_modes(target);
    }
    let modes = e.control.as_ref().expect("validated: target or control");
    let ctrl = Control::constant(modes, resolved.d.n_steps(), resolved.noise.n_modes())?;
    let traj = solve_skeleton(
        &resolved.model,
        &resolved.noise,
        &resolved.x0,
        &ctrl,
        Driving::QPhi,
        &resolved.d,
    )?;
    Ok(traj.endpoint().clone())
}
