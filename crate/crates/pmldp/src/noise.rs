//! Spectral noise operator, Wiener path sampling, controls, and the
//! piecewise-linear path approximation.
//!
//! Q is diagonal in the sine eigenbasis, Q e_k = q_k e_k, which makes the
//! projected operator P_n Q exact (zero the multipliers above n), keeps the
//! Hilbert-Schmidt norm explicit, and lets the short-time rate functional
//! invert Q mode by mode. Increment streams are deterministic ChaCha streams
//! keyed by (seed, path_index), so path batches parallelize without shared
//! state and regenerate bit-identically.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::solver::Trajectory;
use crate::spaces::{inner_l2, orthonormal_modes, Discretization, Field};

/// Spectral multipliers q_k >= 0 of the noise operator.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    q: Vec<f64>,
}

impl NoiseSpec {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::InvalidParameter(
                "noise needs at least one mode".into(),
            ));
        }
        if q.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "noise multipliers must be finite and >= 0".into(),
            ));
        }
        Ok(Self { q })
    }

    /// q_k = k^{-beta} on the first `n_modes` modes.
    pub fn power_decay(n_modes: usize, beta: f64) -> Result<Self> {
        if beta < 0.0 || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "beta must be >= 0, got {beta}"
            )));
        }
        Self::new((1..=n_modes).map(|k| (k as f64).powf(-beta)).collect())
    }

    #[inline]
    pub fn n_modes(&self) -> usize {
        self.q.len()
    }

    #[inline]
    pub fn multipliers(&self) -> &[f64] {
        &self.q
    }

    /// Multipliers zeroed above mode n (P_n Q). Keeps the mode count so paths
    /// stay shape-compatible.
    pub fn truncated(&self, n: usize) -> NoiseSpec {
        let mut q = self.q.clone();
        for (idx, v) in q.iter_mut().enumerate() {
            if idx + 1 > n {
                *v = 0.0;
            }
        }
        NoiseSpec { q }
    }

    fn check_fits(&self, d: &Discretization) -> Result<()> {
        if self.n_modes() > d.n_points() {
            return Err(Error::InvalidParameter(format!(
                "n_modes = {} exceeds grid size M = {}",
                self.n_modes(),
                d.n_points()
            )));
        }
        Ok(())
    }
}

/// Squared Hilbert-Schmidt norm of Q as a map into H: sum_k q_k^2 / |mu_k|.
pub fn hs_norm_sq(ns: &NoiseSpec, d: &Discretization) -> Result<f64> {
    ns.check_fits(d)?;
    Ok(ns
        .q
        .iter()
        .enumerate()
        .map(|(idx, q)| q * q / d.eigenvalue(idx + 1).abs())
        .sum())
}

/// Tail delta(n) = q(P_n Q - Q) = sum_{k > n} q_k^2 / |mu_k|; decreasing in n
/// and zero at n = n_modes.
pub fn hs_tail_sq(ns: &NoiseSpec, n: usize, d: &Discretization) -> Result<f64> {
    ns.check_fits(d)?;
    Ok(ns
        .q
        .iter()
        .enumerate()
        .filter(|(idx, _)| idx + 1 > n)
        .map(|(idx, q)| q * q / d.eigenvalue(idx + 1).abs())
        .sum())
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent substream seed (used for per-epsilon path blocks).
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut state = seed;
    let hashed = splitmix64(&mut state);
    let mut state2 = hashed ^ stream;
    splitmix64(&mut state2)
}

fn path_stream(seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut state = seed;
    let hashed = splitmix64(&mut state);
    let mut key_state = hashed ^ path_index;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut key_state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Brownian increments of the first n_modes cylindrical components on the
/// solver time grid; entry (i, k) is Delta B_{i,k} ~ N(0, dt).
#[derive(Debug, Clone, PartialEq)]
pub struct WienerPath {
    increments: Vec<f64>,
    n_steps: usize,
    n_modes: usize,
    pub seed: u64,
    pub path_index: u64,
}

impl WienerPath {
    #[inline]
    pub fn increment(&self, step: usize, mode_idx: usize) -> f64 {
        self.increments[step * self.n_modes + mode_idx]
    }

    #[inline]
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    #[inline]
    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    /// B_{t_i, k} = sum of the first i increments of mode k.
    pub fn cumulative(&self, step: usize, mode_idx: usize) -> f64 {
        (0..step).map(|i| self.increment(i, mode_idx)).sum()
    }
}

/// Samples the increment array for one path. Pure in (ns, d, seed,
/// path_index); identical arguments reproduce the path bit for bit.
pub fn sample_path(ns: &NoiseSpec, d: &Discretization, seed: u64, path_index: u64) -> WienerPath {
    let n_steps = d.n_steps();
    let n_modes = ns.n_modes();
    let mut rng = path_stream(seed, path_index);
    let sqrt_dt = d.dt().sqrt();
    let increments = (0..n_steps * n_modes)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z * sqrt_dt
        })
        .collect();
    WienerPath {
        increments,
        n_steps,
        n_modes,
        seed,
        path_index,
    }
}

/// Time-indexed control coefficients against the orthonormal sine modes,
/// piecewise constant on the solver step grid. Row i applies on
/// (t_i, t_{i+1}]; column j is mode k = j + 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Control {
    coeffs: Vec<f64>,
    n_steps: usize,
    n_modes: usize,
}

impl Control {
    pub fn zeros(n_steps: usize, n_modes: usize) -> Self {
        Self {
            coeffs: vec![0.0; n_steps * n_modes],
            n_steps,
            n_modes,
        }
    }

    /// Constant-in-time expansion from (mode, coefficient) pairs.
    pub fn constant(modes: &[(usize, f64)], n_steps: usize, n_modes: usize) -> Result<Self> {
        let mut c = Self::zeros(n_steps, n_modes);
        for &(k, a) in modes {
            if k == 0 || k > n_modes {
                return Err(Error::InvalidParameter(format!(
                    "control mode {k} outside 1..={n_modes}"
                )));
            }
            for i in 0..n_steps {
                c.set(i, k - 1, a);
            }
        }
        Ok(c)
    }

    #[inline]
    pub fn get(&self, step: usize, mode_idx: usize) -> f64 {
        self.coeffs[step * self.n_modes + mode_idx]
    }

    #[inline]
    pub fn set(&mut self, step: usize, mode_idx: usize, v: f64) {
        self.coeffs[step * self.n_modes + mode_idx] = v;
    }

    #[inline]
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    #[inline]
    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.coeffs {
            *v *= c;
        }
    }

    /// ||phi||^2 over [0,T] x E: sum_{i,k} dt * coeffs[i,k]^2.
    pub fn l2_norm_sq(&self, d: &Discretization) -> f64 {
        d.dt() * self.coeffs.iter().map(|c| c * c).sum::<f64>()
    }
}

/// The forcing path t |-> eps * Q W_t sampled on the step grid.
pub fn qw_trajectory(
    ns: &NoiseSpec,
    w: &WienerPath,
    eps: f64,
    d: &Discretization,
) -> Result<Trajectory> {
    ns.check_fits(d)?;
    if w.n_modes() != ns.n_modes() || w.n_steps() != d.n_steps() {
        return Err(Error::InvalidParameter(
            "Wiener path shape does not match noise spec / grid".into(),
        ));
    }
    let modes = orthonormal_modes(ns.n_modes(), d)?;
    let mut states = Vec::with_capacity(d.n_steps() + 1);
    states.push(Field::zeros(d));
    let mut acc = vec![0.0; ns.n_modes()];
    for i in 0..d.n_steps() {
        for (k, a) in acc.iter_mut().enumerate() {
            *a += w.increment(i, k);
        }
        let mut f = Field::zeros(d);
        for (k, (&a, q)) in acc.iter().zip(&ns.q).enumerate() {
            f.axpy(eps * q * a, &modes[k]);
        }
        states.push(f);
    }
    Trajectory::from_states(states, d)
}

/// Piecewise-linear interpolation of a path at the N coarse nodes t_l = l T/N,
/// resampled onto the fine step grid. N must divide K.
pub fn piecewise_linear(traj: &Trajectory, n_sub: usize, d: &Discretization) -> Result<Trajectory> {
    let k_steps = d.n_steps();
    if n_sub == 0 || k_steps % n_sub != 0 {
        return Err(Error::InvalidParameter(format!(
            "N = {n_sub} must divide the number of time steps K = {k_steps}"
        )));
    }
    if traj.len() != k_steps + 1 {
        return Err(Error::InvalidParameter(
            "trajectory not on the solver grid".into(),
        ));
    }
    let stride = k_steps / n_sub;
    let mut states = Vec::with_capacity(k_steps + 1);
    states.push(traj.state(0).clone());
    for i in 1..=k_steps {
        let block = (i - 1) / stride;
        let lo = block * stride;
        let hi = lo + stride;
        let frac = (i - lo) as f64 / stride as f64;
        let mut f = traj.state(lo).clone();
        let diff = traj.state(hi).sub(traj.state(lo));
        f.axpy(frac, &diff);
        states.push(f);
    }
    Trajectory::from_states(states, d)
}

/// Piecewise-constant time derivative of the N-node linear interpolant,
/// expanded in the first `n_modes` orthonormal modes. Errors if the path has
/// relative energy above 1e-8 outside that span.
pub fn pl_derivative(
    traj: &Trajectory,
    n_modes: usize,
    n_sub: usize,
    d: &Discretization,
) -> Result<Control> {
    let k_steps = d.n_steps();
    if n_sub == 0 || k_steps % n_sub != 0 {
        return Err(Error::InvalidParameter(format!(
            "N = {n_sub} must divide the number of time steps K = {k_steps}"
        )));
    }
    if n_modes == 0 || n_modes > d.n_points() {
        return Err(Error::InvalidParameter(format!(
            "n_modes = {n_modes} outside 1..={}",
            d.n_points()
        )));
    }
    let stride = k_steps / n_sub;
    let slope_scale = n_sub as f64 / d.t_final();
    let modes = orthonormal_modes(n_modes, d)?;
    let mut ctrl = Control::zeros(k_steps, n_modes);
    let mut energy_in = 0.0;
    let mut energy_total = 0.0;
    for block in 0..n_sub {
        let lo = block * stride;
        let hi = lo + stride;
        let mut diff = traj.state(hi).sub(traj.state(lo));
        diff.scale(slope_scale);
        let mut coeffs = vec![0.0; n_modes];
        let mut in_span = 0.0;
        for (k, e) in modes.iter().enumerate() {
            let c = inner_l2(&diff, e, d)?;
            coeffs[k] = c;
            in_span += c * c;
        }
        let total = inner_l2(&diff, &diff, d)?;
        energy_in += in_span;
        energy_total += total;
        for i in lo..hi {
            for (k, &c) in coeffs.iter().enumerate() {
                ctrl.set(i, k, c);
            }
        }
    }
    if energy_total > 0.0 {
        let out_frac = ((energy_total - energy_in) / energy_total).max(0.0);
        if out_frac > 1e-8 {
            return Err(Error::Numerical(format!(
                "path has relative energy {out_frac:.3e} outside the first {n_modes} modes"
            )));
        }
    }
    Ok(ctrl)
}
