//! Control-energy rate functionals.
//!
//! The action of a control is half its squared L^2([0,T] x E) norm. The
//! endpoint functional minimizes the action over controls steering the
//! Q-driven skeleton into an H-ball around a target; infeasibility is an
//! explicit `Infinite` variant, never a sentinel float. The short-time
//! functional applies to straight-noise trajectories z_t = x + Q int phi and
//! is evaluated in closed form through the mode-wise pseudo-inverse of Q.
//!
//! The endpoint optimizer is a penalty continuation (rho multiplied by 10
//! per round, with a running multiplier estimate so feasibility does not
//! hinge on unbounded rho) around a line-searched descent whose direction is
//! preconditioned by the diagonal-plus-rank-one model Hessian of the
//! penalized objective. Endpoint sensitivities come from central finite
//! differences over a coarse time-block/mode parametrization of the control;
//! a Levenberg-Marquardt restoration pass on the endpoint residual cleans up
//! runs that park just outside the ball. Finite-difference evaluations within
//! one gradient run through the data-parallel map, each owning its solver
//! workspace.

use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::model::ModelSpec;
use crate::noise::{Control, NoiseSpec};
use crate::solver::{solve_skeleton, Driving, Trajectory};
use crate::spaces::{inner_l2, norm_h, orthonormal_modes, Discretization, Field};

/// Rate value with explicit infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateValue {
    Finite(f64),
    Infinite,
}

impl RateValue {
    pub fn finite(&self) -> Option<f64> {
        match self {
            RateValue::Finite(v) => Some(*v),
            RateValue::Infinite => None,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, RateValue::Infinite)
    }
}

#[derive(Debug, Clone)]
pub struct RateResult {
    pub value: RateValue,
    /// Minimizing control; absent when the value is infinite.
    pub argmin: Option<Control>,
    /// Constraint violation at the reported point (H-norm excess over the
    /// ball radius, or the off-range energy fraction for the short-time
    /// functional).
    pub residual: f64,
    pub iterations: usize,
}

/// Knobs of the endpoint optimizer.
#[derive(Debug, Clone, Copy)]
pub struct RateOpts {
    /// Modes of the coarse control parametrization.
    pub n_ctrl_modes: usize,
    /// Time blocks of the coarse control parametrization.
    pub n_ctrl_times: usize,
    /// Feasibility tolerance on the endpoint constraint (H norm).
    pub constraint_tol: f64,
    pub rho0: f64,
    pub rho_factor: f64,
    pub rounds: usize,
    pub max_inner: usize,
    pub grad_tol: f64,
    pub fd_step: f64,
}

impl Default for RateOpts {
    fn default() -> Self {
        Self {
            n_ctrl_modes: 3,
            n_ctrl_times: 8,
            constraint_tol: 1e-4,
            rho0: 10.0,
            rho_factor: 10.0,
            rounds: 5,
            max_inner: 80,
            grad_tol: 1e-8,
            fd_step: 1e-3,
        }
    }
}

/// Action functional: half the squared control norm, 0.5 * sum dt c^2.
pub fn action(ctrl: &Control, d: &Discretization) -> f64 {
    0.5 * ctrl.l2_norm_sq(d)
}

struct CoarseParam {
    n_modes: usize,
    n_times: usize,
    n_steps: usize,
    /// dt * (number of fine steps) per time block.
    durations: Vec<f64>,
}

impl CoarseParam {
    fn new(opts: &RateOpts, d: &Discretization) -> Self {
        let n_steps = d.n_steps();
        let n_times = opts.n_ctrl_times.min(n_steps).max(1);
        let mut durations = vec![0.0; n_times];
        for i in 0..n_steps {
            durations[i * n_times / n_steps] += d.dt();
        }
        Self {
            n_modes: opts.n_ctrl_modes,
            n_times,
            n_steps,
            durations,
        }
    }

    fn len(&self) -> usize {
        self.n_modes * self.n_times
    }

    fn expand(&self, theta: &[f64]) -> Control {
        let mut ctrl = Control::zeros(self.n_steps, self.n_modes);
        for i in 0..self.n_steps {
            let block = i * self.n_times / self.n_steps;
            for k in 0..self.n_modes {
                ctrl.set(i, k, theta[block * self.n_modes + k]);
            }
        }
        ctrl
    }

    fn action(&self, theta: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (block, dur) in self.durations.iter().enumerate() {
            for k in 0..self.n_modes {
                let v = theta[block * self.n_modes + k];
                acc += dur * v * v;
            }
        }
        0.5 * acc
    }
}

/// Minimal action over controls with ||z_T^{Q phi} - target||_H <= delta.
///
/// Infeasible runs (residual above `constraint_tol` after the continuation)
/// report `Infinite` with the achieved residual; a finite value always comes
/// with its minimizing control and a residual within tolerance.
pub fn rate_endpoint(
    spec: &ModelSpec,
    ns: &NoiseSpec,
    x0: &Field,
    target: &Field,
    delta_constraint: f64,
    opts: &RateOpts,
    d: &Discretization,
) -> Result<RateResult> {
    if !(delta_constraint >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "delta_constraint must be >= 0, got {delta_constraint}"
        )));
    }
    if opts.n_ctrl_modes == 0 || opts.n_ctrl_modes > ns.n_modes() {
        return Err(Error::InvalidParameter(format!(
            "n_ctrl_modes = {} outside 1..={}",
            opts.n_ctrl_modes,
            ns.n_modes()
        )));
    }
    if target.len() != d.n_points() || x0.len() != d.n_points() {
        return Err(Error::DimensionMismatch {
            expected: d.n_points(),
            found: target.len(),
        });
    }
    let param = CoarseParam::new(opts, d);

    // Endpoint distance for one parameter vector; None when the solve fails
    // (line search treats that as a rejected point).
    let distance = |theta: &[f64]| -> Option<f64> {
        let ctrl = param.expand(theta);
        let traj = solve_skeleton(spec, ns, x0, &ctrl, Driving::QPhi, d).ok()?;
        norm_h(&traj.endpoint().sub(target), d).ok()
    };

    let mut theta = vec![0.0; param.len()];
    let mut dist = distance(&theta)
        .ok_or_else(|| Error::Numerical("skeleton solve failed at the zero control".into()))?;
    let mut iterations = 0usize;
    let mut rho = opts.rho0;
    // Running multiplier estimate for the ball constraint. A pure quadratic
    // penalty needs rho beyond any tractable conditioning to pin the residual
    // below tolerance when delta = 0; carrying the multiplier keeps rho
    // bounded while the feasibility error contracts geometrically.
    let mut lambda = 0.0f64;

    // Shifted quadratic penalty and its derivative weight in the excess g.
    let penalty = |g: f64, lambda: f64, rho: f64| -> f64 {
        let m = (lambda + 2.0 * rho * g).max(0.0);
        (m * m - lambda * lambda) / (4.0 * rho)
    };

    // The scheduled rounds always run; while the constraint is still out of
    // tolerance the continuation keeps going, letting the multiplier build up.
    let max_rounds = opts.rounds + 10;
    for round in 0..max_rounds {
        if round >= opts.rounds && (dist - delta_constraint).max(0.0) <= opts.constraint_tol {
            break;
        }
        for _ in 0..opts.max_inner {
            let g_cur = dist - delta_constraint;
            let obj = param.action(&theta) + penalty(g_cur, lambda, rho);
            let weight = (lambda + 2.0 * rho * g_cur).max(0.0);

            // Gradient: analytic action part plus constraint chain rule with
            // a central-difference endpoint sensitivity.
            let action_grad: Vec<f64> = (0..param.len())
                .map(|p| {
                    let block = p / param.n_modes;
                    param.durations[block] * theta[p]
                })
                .collect();
            let mut grad = action_grad;
            let mut sens = vec![0.0; param.len()];
            if weight > 0.0 {
                sens = map_indexed(param.len(), |p| {
                    let h = opts.fd_step * (1.0 + theta[p].abs());
                    let mut plus = theta.clone();
                    plus[p] += h;
                    let mut minus = theta.clone();
                    minus[p] -= h;
                    match (distance(&plus), distance(&minus)) {
                        (Some(a), Some(b)) => (a - b) / (2.0 * h),
                        _ => 0.0,
                    }
                });
                for (g, s) in grad.iter_mut().zip(&sens) {
                    *g += weight * s;
                }
            }
            let gn2: f64 = grad.iter().map(|g| g * g).sum();
            if gn2.sqrt() <= opts.grad_tol * (1.0 + obj.abs()) {
                break;
            }

            // Descent direction preconditioned by the model Hessian
            // diag(durations) + 2 rho s s^T (Sherman-Morrison): the penalty
            // curvature lives in the single constraint direction and would
            // otherwise throttle plain gradient steps.
            let dur_of = |p: usize| param.durations[p / param.n_modes];
            let mut dir: Vec<f64> = grad
                .iter()
                .enumerate()
                .map(|(p, g)| g / dur_of(p))
                .collect();
            if weight > 0.0 {
                let c = 2.0 * rho;
                let s_dinv_s: f64 = sens
                    .iter()
                    .enumerate()
                    .map(|(p, s)| s * s / dur_of(p))
                    .sum();
                let s_dinv_grad: f64 = sens
                    .iter()
                    .zip(&grad)
                    .enumerate()
                    .map(|(p, (s, g))| s * g / dur_of(p))
                    .sum();
                let factor = c * s_dinv_grad / (1.0 + c * s_dinv_s);
                for (v, (p, s)) in dir.iter_mut().zip(sens.iter().enumerate()) {
                    *v -= factor * s / dur_of(p);
                }
            }
            let slope: f64 = grad.iter().zip(&dir).map(|(g, v)| g * v).sum();
            if !(slope > 0.0) {
                break;
            }

            // Backtracking line search on the penalized objective.
            let mut step = 1.0f64;
            let mut accepted = false;
            while step >= 1e-14 {
                let trial: Vec<f64> = theta.iter().zip(&dir).map(|(t, v)| t - step * v).collect();
                if let Some(td) = distance(&trial) {
                    let tobj = param.action(&trial) + penalty(td - delta_constraint, lambda, rho);
                    if tobj <= obj - 1e-4 * step * slope {
                        theta = trial;
                        dist = td;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            iterations += 1;
            if !accepted {
                break; // stalled at this rho; the multiplier update may still help
            }
        }
        if std::env::var_os("PMLDP_RATE_DEBUG").is_some() {
            eprintln!(
                "round {round}: rho {rho:.1e} lambda {lambda:.3e} dist {dist:.6e} action {:.6} iters {iterations}",
                param.action(&theta)
            );
        }
        lambda = (lambda + 2.0 * rho * (dist - delta_constraint)).max(0.0);
        rho = (rho * opts.rho_factor).min(1e6);
    }

    // Feasibility restoration: when the continuation parks just outside the
    // ball, Levenberg-Marquardt steps on the H-weighted endpoint residual
    // walk the excess off. The scalar distance gradient is useless here (it
    // is balanced against the action pull at the continuation's stationary
    // point), but the vector residual still sees the whole constraint
    // geometry.
    if dist - delta_constraint > opts.constraint_tol {
        let modes = orthonormal_modes(d.n_points(), d)?;
        let weights: Vec<f64> = (1..=d.n_points())
            .map(|k| 1.0 / d.eigenvalue(k).abs().sqrt())
            .collect();
        // H-weighted mode coefficients of z_T - target; the Euclidean norm of
        // this vector is the H distance.
        let residual_vec = |theta: &[f64]| -> Option<Vec<f64>> {
            let ctrl = param.expand(theta);
            let traj = solve_skeleton(spec, ns, x0, &ctrl, Driving::QPhi, d).ok()?;
            let e = traj.endpoint().sub(target);
            let mut out = Vec::with_capacity(modes.len());
            for (em, w) in modes.iter().zip(&weights) {
                out.push(w * inner_l2(&e, em, d).ok()?);
            }
            Some(out)
        };
        let norm2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();

        let mut res_vec = match residual_vec(&theta) {
            Some(v) => v,
            None => Vec::new(),
        };
        let mut nu = 1e-3f64;
        for _ in 0..40 {
            if res_vec.is_empty() || norm2(&res_vec) <= delta_constraint + 0.5 * opts.constraint_tol
            {
                break;
            }
            // FD Jacobian of the residual vector, one column per parameter.
            let jac: Vec<Option<Vec<f64>>> = map_indexed(param.len(), |p| {
                let h = opts.fd_step * (1.0 + theta[p].abs());
                let mut plus = theta.clone();
                plus[p] += h;
                let mut minus = theta.clone();
                minus[p] -= h;
                match (residual_vec(&plus), residual_vec(&minus)) {
                    (Some(a), Some(b)) => {
                        Some(a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * h)).collect())
                    }
                    _ => None,
                }
            });
            if jac.iter().any(|c| c.is_none()) {
                break;
            }
            let jac: Vec<Vec<f64>> = jac.into_iter().map(|c| c.unwrap()).collect();
            let p = param.len();
            let mut jtj = vec![vec![0.0; p]; p];
            let mut jtr = vec![0.0; p];
            for a in 0..p {
                for b in a..p {
                    let s: f64 = jac[a].iter().zip(&jac[b]).map(|(x, y)| x * y).sum();
                    jtj[a][b] = s;
                    jtj[b][a] = s;
                }
                jtr[a] = jac[a].iter().zip(&res_vec).map(|(x, y)| x * y).sum();
            }
            let max_diag = (0..p).map(|a| jtj[a][a]).fold(0.0f64, f64::max);
            if max_diag <= 0.0 {
                break; // degenerate noise: endpoint insensitive to the control
            }
            let mut improved = false;
            for _ in 0..8 {
                let mut a_mat = jtj.clone();
                for (i, row) in a_mat.iter_mut().enumerate() {
                    row[i] += nu * max_diag;
                }
                if let Some(delta) = solve_dense_spd(&mut a_mat, &jtr) {
                    let trial: Vec<f64> =
                        theta.iter().zip(&delta).map(|(t, dlt)| t - dlt).collect();
                    if let Some(tr) = residual_vec(&trial) {
                        if norm2(&tr) < norm2(&res_vec) {
                            theta = trial;
                            res_vec = tr;
                            nu = (nu / 3.0).max(1e-12);
                            improved = true;
                            break;
                        }
                    }
                }
                nu *= 10.0;
            }
            iterations += 1;
            if !improved {
                break;
            }
        }
        if let Some(td) = distance(&theta) {
            dist = td;
        }
    }

    let residual = (dist - delta_constraint).max(0.0);
    if residual <= opts.constraint_tol {
        Ok(RateResult {
            value: RateValue::Finite(param.action(&theta)),
            argmin: Some(param.expand(&theta)),
            residual,
            iterations,
        })
    } else {
        Ok(RateResult {
            value: RateValue::Infinite,
            argmin: None,
            residual,
            iterations,
        })
    }
}

/// Cholesky solve of a small symmetric positive-definite system; `a` is
/// consumed as scratch. Returns None on a non-positive pivot.
fn solve_dense_spd(a: &mut [Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                a[i][i] = s.sqrt();
            } else {
                a[i][j] = s / a[j][j];
            }
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            let t = y[k];
            y[i] -= a[i][k] * t;
        }
        y[i] /= a[i][i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            let t = y[k];
            y[i] -= a[k][i] * t;
        }
        y[i] /= a[i][i];
    }
    Some(y)
}

const INIT_TOL: f64 = 1e-10;
const RANGE_TOL: f64 = 1e-8;

/// Short-time functional: for z_t = x + Q int_0^t phi_s ds the minimal energy
/// is 0.5 * int sum_k (zdot_{t,k} / q_k)^2 dt, evaluated mode by mode from the
/// discrete derivative. Infinite when z does not start at x or its derivative
/// has relative energy above 1e-8 on modes outside the range of Q.
pub fn rate_short_time(
    ns: &NoiseSpec,
    x0: &Field,
    z: &Trajectory,
    d: &Discretization,
) -> Result<RateResult> {
    if z.len() != d.n_steps() + 1 {
        return Err(Error::InvalidParameter(format!(
            "trajectory has {} states, solver grid wants {}",
            z.len(),
            d.n_steps() + 1
        )));
    }
    if x0.len() != d.n_points() {
        return Err(Error::DimensionMismatch {
            expected: d.n_points(),
            found: x0.len(),
        });
    }
    let init_dev = norm_h(&z.state(0).sub(x0), d)?;
    if init_dev > INIT_TOL * norm_h(x0, d)?.max(1.0) {
        return Ok(RateResult {
            value: RateValue::Infinite,
            argmin: None,
            residual: init_dev,
            iterations: 0,
        });
    }

    let n_modes = ns.n_modes();
    let modes = orthonormal_modes(n_modes, d)?;
    let q = ns.multipliers();
    let dt = d.dt();
    let k_steps = d.n_steps();

    let mut ctrl = Control::zeros(k_steps, n_modes);
    let mut energy_total = 0.0;
    let mut energy_off_range = 0.0;
    let mut value = 0.0;
    for i in 0..k_steps {
        let diff = z.state(i + 1).sub(z.state(i));
        let total_sq = inner_l2(&diff, &diff, d)? / (dt * dt);
        let mut in_span_sq = 0.0;
        for (k, e) in modes.iter().enumerate() {
            let c = inner_l2(&diff, e, d)? / dt;
            in_span_sq += c * c;
            if q[k] > 0.0 {
                let phi_c = c / q[k];
                ctrl.set(i, k, phi_c);
                value += 0.5 * dt * phi_c * phi_c;
            } else {
                energy_off_range += dt * c * c;
            }
        }
        energy_total += dt * total_sq;
        energy_off_range += dt * (total_sq - in_span_sq).max(0.0);
    }

    if energy_total > 0.0 {
        let off = energy_off_range / energy_total;
        if off > RANGE_TOL {
            return Ok(RateResult {
                value: RateValue::Infinite,
                argmin: None,
                residual: off,
                iterations: 0,
            });
        }
    }
    Ok(RateResult {
        value: RateValue::Finite(value),
        argmin: Some(ctrl),
        residual: 0.0,
        iterations: 0,
    })
}
