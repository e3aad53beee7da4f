//! Semi-implicit time integration.
//!
//! One step solves u - dt*m*L Psi(u) = x + dt*m*Phi(x) + g by damped Newton
//! (m is the drift multiplier, g the additive forcing increment). Psi carries
//! the stiffness and the monotonicity that makes the step uniquely solvable,
//! so it goes implicit; Phi is lower order and stays explicit. The same
//! driver integrates the stochastic equation (g = eps * Q dW increments), the
//! skeleton equation (g = dt * forcing), the spectrally projected equation,
//! the piecewise-linear-noise equation, and the short-time rescaling (drift
//! multiplied by eps^2).

use crate::error::{Error, Result};
use crate::model::{phi, psi, psi_prime_regularized, ModelSpec};
use crate::noise::{
    piecewise_linear, pl_derivative, qw_trajectory, Control, NoiseSpec, WienerPath,
};
use crate::spaces::{norm_h, norm_lp, orthonormal_modes, solve_tridiagonal, Discretization, Field};

/// Abort threshold on the nodal sup norm.
const BLOWUP_LIMIT: f64 = 1e8;
/// Newton convergence tolerance in the discrete L^2 norm.
const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITERS: usize = 50;
/// Jacobian-only regularization of Psi' at s = 0.
const JACOBIAN_ETA: f64 = 1e-12;

/// Uniformly time-indexed states X_{t_0} .. X_{t_K} on the step grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<Field>,
    d: Discretization,
}

impl Trajectory {
    pub fn from_states(states: Vec<Field>, d: &Discretization) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidParameter(
                "trajectory needs at least one state".into(),
            ));
        }
        for s in &states {
            if s.len() != d.n_points() {
                return Err(Error::DimensionMismatch {
                    expected: d.n_points(),
                    found: s.len(),
                });
            }
            if s.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("Trajectory::from_states"));
            }
        }
        Ok(Self { states, d: *d })
    }

    /// The constant-in-time trajectory on the full step grid.
    pub fn constant(x0: &Field, d: &Discretization) -> Self {
        Self {
            states: vec![x0.clone(); d.n_steps() + 1],
            d: *d,
        }
    }

    #[inline]
    pub fn state(&self, i: usize) -> &Field {
        &self.states[i]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.states.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    #[inline]
    pub fn endpoint(&self) -> &Field {
        self.states.last().expect("non-empty by construction")
    }

    #[inline]
    pub fn discretization(&self) -> &Discretization {
        &self.d
    }

    /// sup_t ||X_t||_H over the grid.
    pub fn sup_norm_h(&self) -> Result<f64> {
        let mut sup = 0.0f64;
        for s in &self.states {
            sup = sup.max(norm_h(s, &self.d)?);
        }
        Ok(sup)
    }

    /// sup_t ||X_t - Y_t||_H over the grid.
    pub fn sup_distance_h(&self, other: &Trajectory) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::InvalidParameter("trajectory lengths differ".into()));
        }
        let mut sup = 0.0f64;
        for (a, b) in self.states.iter().zip(&other.states) {
            sup = sup.max(norm_h(&a.sub(b), &self.d)?);
        }
        Ok(sup)
    }

    /// Trapezoid quadrature of int_0^T ||X_t||_p^p dt.
    pub fn integral_lp_pow(&self, p: f64) -> Result<f64> {
        let dt = self.d.dt();
        let mut acc = 0.0;
        for (i, s) in self.states.iter().enumerate() {
            let w = if i == 0 || i + 1 == self.states.len() {
                0.5
            } else {
                1.0
            };
            acc += w * norm_lp(s, p, &self.d)?.powf(p);
        }
        Ok(acc * dt)
    }
}

/// Diagnostics for one implicit solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub newton_iters: usize,
    pub residual: f64,
    pub dt_used: f64,
}

fn residual_vec(
    spec: &ModelSpec,
    u: &Field,
    dt: f64,
    rhs: &Field,
    d: &Discretization,
) -> Result<Field> {
    let m = spec.drift_multiplier;
    let psi_u = Field::from_values(u.values().iter().map(|&s| psi(spec, s)).collect(), d)
        .map_err(|_| Error::NonFinite("implicit step: Psi overflow"))?;
    let l_psi = crate::spaces::apply_l(&psi_u, d)?;
    let mut f = u.clone();
    f.axpy(-dt * m, &l_psi);
    f.axpy(-1.0, rhs);
    Ok(f)
}

/// One backward-Euler step of the drift with an explicit additive forcing:
/// returns u with u - dt*m*L Psi(u) = x + dt*m*Phi(x) + forcing, solved by
/// damped Newton with the tridiagonal Jacobian I - dt*m*L diag(Psi'(u)).
pub fn implicit_step(
    spec: &ModelSpec,
    x: &Field,
    dt: f64,
    forcing: &Field,
    d: &Discretization,
) -> Result<(Field, StepReport)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let m = spec.drift_multiplier;
    let mut rhs = x.clone();
    for (r, &s) in rhs.values_mut().iter_mut().zip(x.values()) {
        *r += dt * m * phi(spec, s);
    }
    rhs.axpy(1.0, forcing);

    let n = d.n_points();
    let inv_h2 = 1.0 / (d.h() * d.h());
    let mut u = x.clone();
    let mut f = residual_vec(spec, &u, dt, &rhs, d)?;
    let mut res = norm_lp(&f, 2.0, d)?;
    // Absolute tolerance at ordinary scales; relative once the state outgrows
    // what f64 resolution can express against an absolute 1e-10.
    let tol = NEWTON_TOL * norm_lp(&rhs, 2.0, d)?.max(1.0);
    let mut iters = 1usize;
    loop {
        if res <= tol {
            return Ok((
                u,
                StepReport {
                    newton_iters: iters,
                    residual: res,
                    dt_used: dt,
                },
            ));
        }
        if iters >= NEWTON_MAX_ITERS {
            return Err(Error::NewtonDiverged {
                residual: res,
                iters,
            });
        }
        // J = I - dt*m*L*diag(Psi'(u)); row i couples psi'(u_{i-1}), psi'(u_i), psi'(u_{i+1}).
        let dpsi: Vec<f64> = u
            .values()
            .iter()
            .map(|&s| psi_prime_regularized(spec, s, JACOBIAN_ETA))
            .collect();
        let diag: Vec<f64> = dpsi
            .iter()
            .map(|p| 1.0 + 2.0 * dt * m * p * inv_h2)
            .collect();
        let lower: Vec<f64> = (0..n.saturating_sub(1))
            .map(|i| -dt * m * dpsi[i] * inv_h2)
            .collect();
        let upper: Vec<f64> = (0..n.saturating_sub(1))
            .map(|i| -dt * m * dpsi[i + 1] * inv_h2)
            .collect();
        let neg_f: Vec<f64> = f.values().iter().map(|v| -v).collect();
        let delta = solve_tridiagonal(&lower, &diag, &upper, &neg_f)?;
        let delta = Field::from_values(delta, d).map_err(|_| Error::NewtonDiverged {
            residual: res,
            iters,
        })?;

        // Damped update: halve the step until the residual decreases.
        let mut lambda = 1.0;
        let mut accepted = None;
        while lambda >= 1e-8 {
            let mut trial = u.clone();
            trial.axpy(lambda, &delta);
            match residual_vec(spec, &trial, dt, &rhs, d) {
                Ok(tf) => {
                    let tres = norm_lp(&tf, 2.0, d)?;
                    if tres < res {
                        accepted = Some((trial, tf, tres));
                        break;
                    }
                }
                Err(_) => {} // overflow at this step length, keep damping
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((nu, nf, nres)) => {
                u = nu;
                f = nf;
                res = nres;
                iters += 1;
            }
            None => {
                return Err(Error::NewtonDiverged {
                    residual: res,
                    iters,
                })
            }
        }
    }
}

/// Integrates K steps with per-step forcing increments. On a Newton failure
/// the step is retried once as two half steps with the forcing split; a
/// second failure aborts.
fn integrate<F>(spec: &ModelSpec, x0: &Field, forcing: F, d: &Discretization) -> Result<Trajectory>
where
    F: Fn(usize) -> Result<Field>,
{
    spec.validate()?;
    if x0.len() != d.n_points() {
        return Err(Error::DimensionMismatch {
            expected: d.n_points(),
            found: x0.len(),
        });
    }
    let dt = d.dt();
    let mut states = Vec::with_capacity(d.n_steps() + 1);
    states.push(x0.clone());
    let mut x = x0.clone();
    for i in 0..d.n_steps() {
        let g = forcing(i)?;
        let u = match implicit_step(spec, &x, dt, &g, d) {
            Ok((u, _)) => u,
            Err(Error::NewtonDiverged { .. }) => {
                let mut gh = g.clone();
                gh.scale(0.5);
                let (mid, _) = implicit_step(spec, &x, 0.5 * dt, &gh, d)?;
                let (u, _) = implicit_step(spec, &mid, 0.5 * dt, &gh, d)?;
                u
            }
            Err(e) => return Err(e),
        };
        let sup = u.max_abs();
        if sup > BLOWUP_LIMIT {
            return Err(Error::BlowUp { step: i, sup });
        }
        states.push(u.clone());
        x = u;
    }
    Trajectory::from_states(states, d)
}

fn check_path_shapes(ns: &NoiseSpec, w: &WienerPath, d: &Discretization) -> Result<()> {
    if ns.n_modes() > d.n_points() {
        return Err(Error::InvalidParameter(format!(
            "n_modes = {} exceeds grid size M = {}",
            ns.n_modes(),
            d.n_points()
        )));
    }
    if w.n_modes() != ns.n_modes() || w.n_steps() != d.n_steps() {
        return Err(Error::InvalidParameter(
            "Wiener path shape does not match noise spec / grid".into(),
        ));
    }
    Ok(())
}

/// Solves dX = b(X) dt + eps Q dW with the sampled increments of `w`.
pub fn solve_spde(
    spec: &ModelSpec,
    ns: &NoiseSpec,
    x0: &Field,
    eps: f64,
    w: &WienerPath,
    d: &Discretization,
) -> Result<Trajectory> {
    check_path_shapes(ns, w, d)?;
    let modes = orthonormal_modes(ns.n_modes(), d)?;
    let q = ns.multipliers();
    integrate(
        spec,
        x0,
        |i| {
            let mut g = Field::zeros(d);
            for (k, e) in modes.iter().enumerate() {
                g.axpy(eps * q[k] * w.increment(i, k), e);
            }
            Ok(g)
        },
        d,
    )
}

/// How a control drives the skeleton equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Driving {
    /// Forcing Q phi: mode k is multiplied by q_k (rate-functional route).
    QPhi,
    /// Forcing phi itself as an H-valued control (stability-estimate route).
    Raw,
}

/// Deterministic controlled equation dz/dt = b(z) + forcing.
pub fn solve_skeleton(
    spec: &ModelSpec,
    ns: &NoiseSpec,
    x0: &Field,
    ctrl: &Control,
    driving: Driving,
    d: &Discretization,
) -> Result<Trajectory> {
    if ctrl.n_steps() != d.n_steps() {
        return Err(Error::InvalidParameter(format!(
            "control has {} steps, grid has {}",
            ctrl.n_steps(),
            d.n_steps()
        )));
    }
    if ctrl.n_modes() > d.n_points() {
        return Err(Error::InvalidParameter(
            "control has more modes than grid".into(),
        ));
    }
    if driving == Driving::QPhi && ctrl.n_modes() > ns.n_modes() {
        return Err(Error::InvalidParameter(
            "Q-driven control has more modes than the noise spec".into(),
        ));
    }
    let modes = orthonormal_modes(ctrl.n_modes(), d)?;
    let q = ns.multipliers();
    let dt = d.dt();
    integrate(
        spec,
        x0,
        |i| {
            let mut g = Field::zeros(d);
            for (k, e) in modes.iter().enumerate() {
                let mult = match driving {
                    Driving::QPhi => q[k],
                    Driving::Raw => 1.0,
                };
                g.axpy(dt * mult * ctrl.get(i, k), e);
            }
            Ok(g)
        },
        d,
    )
}

/// Stochastic equation with the noise projected onto the first n modes.
pub fn solve_projected(
    spec: &ModelSpec,
    ns: &NoiseSpec,
    x0: &Field,
    eps: f64,
    n: usize,
    w: &WienerPath,
    d: &Discretization,
) -> Result<Trajectory> {
    if n > ns.n_modes() {
        return Err(Error::InvalidParameter(format!(
            "projection rank {n} exceeds n_modes = {}",
            ns.n_modes()
        )));
    }
    solve_spde(spec, &ns.truncated(n), x0, eps, w, d)
}

/// Deterministic equation driven by the derivative of the N-node
/// piecewise-linear interpolation of the projected noise path.
pub fn solve_pl_noise(
    spec: &ModelSpec,
    ns: &NoiseSpec,
    x0: &Field,
    eps: f64,
    n: usize,
    n_sub: usize,
    w: &WienerPath,
    d: &Discretization,
) -> Result<Trajectory> {
    if n == 0 || n > ns.n_modes() {
        return Err(Error::InvalidParameter(format!(
            "projection rank {n} outside 1..={}",
            ns.n_modes()
        )));
    }
    let path = qw_trajectory(&ns.truncated(n), w, eps, d)?;
    let interp = piecewise_linear(&path, n_sub, d)?;
    let ctrl = pl_derivative(&interp, n, n_sub, d)?;
    solve_skeleton(spec, ns, x0, &ctrl, Driving::Raw, d)
}

/// Short-time rescaled equation: drift scaled by eps^2, noise by eps.
pub fn solve_short_time(
    spec: &ModelSpec,
    ns: &NoiseSpec,
    x0: &Field,
    eps: f64,
    w: &WienerPath,
    d: &Discretization,
) -> Result<Trajectory> {
    if eps == 0.0 {
        if x0.len() != d.n_points() {
            return Err(Error::DimensionMismatch {
                expected: d.n_points(),
                found: x0.len(),
            });
        }
        return Ok(Trajectory::constant(x0, d));
    }
    let scaled = spec.with_drift_multiplier(spec.drift_multiplier * eps * eps);
    solve_spde(&scaled, ns, x0, eps, w, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use crate::noise::sample_path;
    use crate::spaces::{apply_l, inner_l2, orthonormal_mode, solve_neg_l};

    fn grid(m: usize, k: usize, t: f64) -> Discretization {
        Discretization::new(m, k, t).unwrap()
    }

    #[test]
    fn implicit_step_zero_fixed_point() {
        let d = grid(7, 10, 1.0);
        let spec = ModelSpec::porous(3.0, 1.0, 0.0).unwrap();
        let z = Field::zeros(&d);
        let (u, rep) = implicit_step(&spec, &z, d.dt(), &z, &d).unwrap();
        assert_eq!(u.max_abs(), 0.0);
        assert_eq!(rep.newton_iters, 1);
        assert_eq!(rep.residual, 0.0);
    }

    #[test]
    fn implicit_step_vanishing_drift() {
        let d = grid(9, 10, 1.0);
        let spec = ModelSpec::porous(3.0, 1e-8, 0.0).unwrap();
        let mut x = orthonormal_mode(1, &d).unwrap();
        x.scale(0.3);
        let mut forcing = orthonormal_mode(2, &d).unwrap();
        forcing.scale(0.1);
        let (u, _) = implicit_step(&spec, &x, d.dt(), &forcing, &d).unwrap();
        let mut expect = x.clone();
        expect.axpy(1.0, &forcing);
        assert!(u.sub(&expect).max_abs() < 1e-6);
    }

    #[test]
    fn implicit_step_matches_picard_oracle() {
        // At small dt the fixed-point iteration u <- x + dt L Psi(u) is a
        // contraction and an independent route to the same solution.
        let d = grid(5, 1000, 1.0); // dt = 1e-3
        let spec = ModelSpec::porous(3.0, 1.0, 0.0).unwrap();
        let x = orthonormal_mode(1, &d).unwrap();
        let zero = Field::zeros(&d);
        let (u, _) = implicit_step(&spec, &x, d.dt(), &zero, &d).unwrap();

        let mut picard = x.clone();
        for _ in 0..2000 {
            let psi_p = Field::from_values(
                picard
                    .values()
                    .iter()
                    .map(|&s| crate::model::psi(&spec, s))
                    .collect(),
                &d,
            )
            .unwrap();
            let lp = apply_l(&psi_p, &d).unwrap();
            let mut next = x.clone();
            next.axpy(d.dt(), &lp);
            let delta = next.sub(&picard).max_abs();
            picard = next;
            if delta < 1e-13 {
                break;
            }
        }
        assert!(u.sub(&picard).max_abs() < 1e-9);
    }

    #[test]
    fn spde_zero_noise_zero_start() {
        let d = grid(7, 20, 0.5);
        let spec = ModelSpec::porous(3.0, 1.0, 0.1).unwrap();
        let ns = NoiseSpec::power_decay(3, 1.0).unwrap();
        let w = sample_path(&ns, &d, 1, 0);
        let z = solve_spde(&spec, &ns, &Field::zeros(&d), 0.0, &w, &d).unwrap();
        for i in 0..=d.n_steps() {
            assert_eq!(z.state(i).max_abs(), 0.0);
        }
    }

    #[test]
    fn spde_deterministic_replay() {
        let d = grid(15, 32, 0.5);
        let spec = ModelSpec::porous(3.0, 1.0, 0.1).unwrap();
        let ns = NoiseSpec::power_decay(4, 1.0).unwrap();
        let x0 = Field::from_modes(&[(1, 0.5)], &d).unwrap();
        let w = sample_path(&ns, &d, 42, 3);
        let a = solve_spde(&spec, &ns, &x0, 0.1, &w, &d).unwrap();
        let b = solve_spde(&spec, &ns, &x0, 0.1, &w, &d).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn skeleton_zero_control_dissipates() {
        let d = grid(15, 100, 0.5);
        let spec = ModelSpec::porous(3.0, 1.0, 0.0).unwrap();
        let ns = NoiseSpec::power_decay(3, 1.0).unwrap();
        let x0 = orthonormal_mode(1, &d).unwrap();
        let ctrl = Control::zeros(d.n_steps(), 3);
        let z = solve_skeleton(&spec, &ns, &x0, &ctrl, Driving::QPhi, &d).unwrap();
        let mut prev = norm_h(z.state(0), &d).unwrap();
        for i in 1..=d.n_steps() {
            let cur = norm_h(z.state(i), &d).unwrap();
            assert!(cur < prev, "H norm not strictly decreasing at step {i}");
            prev = cur;
        }
    }

    #[test]
    fn skeleton_zero_control_zero_start() {
        let d = grid(7, 10, 0.5);
        let spec = ModelSpec::porous(3.0, 1.0, 0.1).unwrap();
        let ns = NoiseSpec::power_decay(2, 1.0).unwrap();
        let ctrl = Control::zeros(d.n_steps(), 2);
        let z = solve_skeleton(&spec, &ns, &Field::zeros(&d), &ctrl, Driving::QPhi, &d).unwrap();
        assert_eq!(z.endpoint().max_abs(), 0.0);
    }

    #[test]
    fn skeleton_matches_fine_step_oracle() {
        // Constant control, dt = 1e-3 vs dt/16 reference of the same scheme.
        let m = 15;
        let t = 0.25;
        let coarse = grid(m, 250, t);
        let fine = grid(m, 4000, t);
        let spec = ModelSpec::porous(3.0, 1.0, 0.0).unwrap();
        let ns = NoiseSpec::new(vec![1.0]).unwrap();
        let x0 = Field::from_modes(&[(1, 0.4)], &coarse).unwrap();
        let cc = Control::constant(&[(1, 0.7)], coarse.n_steps(), 1).unwrap();
        let cf = Control::constant(&[(1, 0.7)], fine.n_steps(), 1).unwrap();
        let zc = solve_skeleton(&spec, &ns, &x0, &cc, Driving::QPhi, &coarse).unwrap();
        let zf = solve_skeleton(&spec, &ns, &x0, &cf, Driving::QPhi, &fine).unwrap();
        let stride = fine.n_steps() / coarse.n_steps();
        let mut sup = 0.0f64;
        for i in 0..=coarse.n_steps() {
            let diff = zc.state(i).sub(zf.state(i * stride));
            sup = sup.max(norm_h(&diff, &coarse).unwrap());
        }
        assert!(sup <= 1e-4, "sup-H deviation {sup}");
    }

    #[test]
    fn projected_full_rank_equals_spde() {
        let d = grid(15, 24, 0.5);
        let spec = ModelSpec::porous(3.0, 1.0, 0.1).unwrap();
        let ns = NoiseSpec::power_decay(4, 1.0).unwrap();
        let x0 = Field::from_modes(&[(1, 0.3)], &d).unwrap();
        let w = sample_path(&ns, &d, 5, 1);
        let full = solve_spde(&spec, &ns, &x0, 0.2, &w, &d).unwrap();
        let proj = solve_projected(&spec, &ns, &x0, 0.2, 4, &w, &d).unwrap();
        assert_eq!(full, proj);
    }

    #[test]
    fn projected_rank_zero_is_deterministic() {
        let d = grid(15, 24, 0.5);
        let spec = ModelSpec::porous(3.0, 1.0, 0.1).unwrap();
        let ns = NoiseSpec::power_decay(4, 1.0).unwrap();
        let x0 = Field::from_modes(&[(1, 0.3)], &d).unwrap();
        let w = sample_path(&ns, &d, 5, 1);
        let proj = solve_projected(&spec, &ns, &x0, 0.2, 0, &w, &d).unwrap();
        let ctrl = Control::zeros(d.n_steps(), 4);
        let skel = solve_skeleton(&spec, &ns, &x0, &ctrl, Driving::QPhi, &d).unwrap();
        assert_eq!(proj, skel);
    }

    #[test]
    fn pl_noise_zero_path_is_skeleton() {
        let d = grid(15, 24, 0.5);
        let spec = ModelSpec::porous(3.0, 1.0, 0.1).unwrap();
        let ns = NoiseSpec::power_decay(4, 1.0).unwrap();
        let x0 = Field::from_modes(&[(1, 0.3)], &d).unwrap();
        let w = sample_path(&ns, &d, 5, 1);
        // eps = 0 kills the path but keeps the full composition in play.
        let pl = solve_pl_noise(&spec, &ns, &x0, 0.0, 4, 8, &w, &d).unwrap();
        let ctrl = Control::zeros(d.n_steps(), 4);
        let skel = solve_skeleton(&spec, &ns, &x0, &ctrl, Driving::QPhi, &d).unwrap();
        assert!(pl.sup_distance_h(&skel).unwrap() < 1e-14);
    }

    #[test]
    fn pl_noise_full_resolution_couples_to_projected() {
        let d = grid(15, 64, 0.25);
        let spec = ModelSpec::porous(3.0, 1.0, 0.0).unwrap();
        let ns = NoiseSpec::power_decay(3, 1.0).unwrap();
        let x0 = Field::from_modes(&[(1, 0.3)], &d).unwrap();
        let w = sample_path(&ns, &d, 9, 2);
        let a = solve_projected(&spec, &ns, &x0, 0.2, 3, &w, &d).unwrap();
        let b = solve_pl_noise(&spec, &ns, &x0, 0.2, 3, d.n_steps(), &w, &d).unwrap();
        let dist = a.sup_distance_h(&b).unwrap();
        assert!(
            dist <= 5.0 * d.dt(),
            "coupled distance {dist} vs dt {}",
            d.dt()
        );
    }

    #[test]
    fn short_time_zero_eps_is_constant() {
        let d = grid(15, 24, 0.5);
        let spec = ModelSpec::porous(3.0, 1.0, 0.1).unwrap();
        let ns = NoiseSpec::power_decay(4, 1.0).unwrap();
        let x0 = Field::from_modes(&[(1, 0.5), (2, -0.2)], &d).unwrap();
        let w = sample_path(&ns, &d, 5, 1);
        let z = solve_short_time(&spec, &ns, &x0, 0.0, &w, &d).unwrap();
        for i in 0..=d.n_steps() {
            assert_eq!(z.state(i), &x0);
        }
    }

    #[test]
    fn short_time_unit_eps_is_plain_spde() {
        let d = grid(15, 24, 0.5);
        let spec = ModelSpec::porous(3.0, 1.0, 0.1).unwrap();
        let ns = NoiseSpec::power_decay(4, 1.0).unwrap();
        let x0 = Field::zeros(&d);
        let w = sample_path(&ns, &d, 5, 1);
        let a = solve_short_time(&spec, &ns, &x0, 1.0, &w, &d).unwrap();
        let b = solve_spde(&spec, &ns, &x0, 1.0, &w, &d).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn weak_form_residual_is_first_order() {
        // Accumulated residual of the weak identity against each test mode,
        // with Psi and Phi both evaluated at the new state, stays O(dt).
        let d = grid(15, 200, 0.5);
        let spec = ModelSpec::porous(3.0, 1.0, 0.1).unwrap();
        let ns = NoiseSpec::power_decay(3, 1.0).unwrap();
        let x0 = Field::from_modes(&[(1, 0.5)], &d).unwrap();
        let cc = Control::constant(&[(1, 0.5), (2, -0.3)], d.n_steps(), 3).unwrap();
        let z = solve_skeleton(&spec, &ns, &x0, &cc, Driving::QPhi, &d).unwrap();

        let mut sup_lp = 0.0f64;
        for i in 0..=d.n_steps() {
            sup_lp = sup_lp.max(norm_lp(z.state(i), spec.r + 1.0, &d).unwrap());
        }
        let bound = 10.0 * d.dt() * (1.0 + sup_lp.powf(spec.r));

        let modes = orthonormal_modes(3, &d).unwrap();
        let q = ns.multipliers();
        for (kidx, e) in modes.iter().enumerate() {
            let inv_e = solve_neg_l(e, &d).unwrap();
            let mut acc = 0.0;
            let mut max_res = 0.0f64;
            for i in 0..d.n_steps() {
                let u = z.state(i + 1);
                let psi_u =
                    Field::from_values(u.values().iter().map(|&s| psi(&spec, s)).collect(), &d)
                        .unwrap();
                let phi_u =
                    Field::from_values(u.values().iter().map(|&s| phi(&spec, s)).collect(), &d)
                        .unwrap();
                let forcing_pair: f64 = (0..3)
                    .map(|k| {
                        d.dt() * q[k] * cc.get(i, k) * inner_l2(&modes[k], &inv_e, &d).unwrap()
                    })
                    .sum();
                acc += d.dt()
                    * (inner_l2(&psi_u, e, &d).unwrap() - inner_l2(&phi_u, &inv_e, &d).unwrap())
                    - forcing_pair;
                let h_now = inner_l2(&z.state(i + 1).sub(z.state(0)), &inv_e, &d).unwrap();
                max_res = max_res.max((h_now + acc).abs());
            }
            assert!(
                max_res <= bound,
                "mode {}: residual {max_res} > bound {bound}",
                kidx + 1
            );
        }
    }

    #[test]
    fn blow_up_reported_not_inf() {
        // Violent forcing against a negligible drift overflows the guard.
        let d = grid(7, 4, 1.0);
        let spec = ModelSpec::porous(3.0, 1e-30, 0.0).unwrap();
        let ns = NoiseSpec::new(vec![1.0]).unwrap();
        let ctrl = Control::constant(&[(1, 1e9)], d.n_steps(), 1).unwrap();
        let out = solve_skeleton(&spec, &ns, &Field::zeros(&d), &ctrl, Driving::Raw, &d);
        assert!(matches!(out, Err(Error::BlowUp { .. })));
    }
}
