//! Nonlinearities and their structural conditions.
//!
//! The drift is b = L Psi + Phi with Psi(s) = theta1 |s|^{r-1} s and Phi
//! either sigma*s or theta2 |s|^{r-1} s + sigma*s. The monotonicity of Psi
//! together with a Lipschitz-type control on Phi makes b dissipative up to a
//! quadratic H-norm term,
//!
//!   <u - v, b(u) - b(v)>  <=  -alpha ||u-v||_{r+1}^{r+1} + c ||u-v||_H^2,
//!
//! and `validate_model` estimates the best (alpha, c) over random field
//! pairs. The fitted c feeds the Gronwall constants used by the stability
//! tests, and the admissibility gate theta1 > theta2 * B compares against the
//! measured operator norm B of (-L)^{-1} on L^{r+1}(m).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spaces::{apply_l, inner_l2, norm_h, norm_lp, solve_neg_l, Discretization, Field};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsiForm {
    PowerLaw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhiForm {
    Linear,
    PowerPlusLinear,
}

fn default_psi_form() -> PsiForm {
    PsiForm::PowerLaw
}

fn default_phi_form() -> PhiForm {
    PhiForm::Linear
}

fn default_drift_multiplier() -> f64 {
    1.0
}

/// Growth exponent and coefficients of the nonlinearity.
///
/// `drift_multiplier` scales the whole drift b; 1 is the plain dynamics, 0
/// gives the pure-noise process used by the Schilder-regime experiments, and
/// the short-time solver multiplies it by eps^2 internally.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub r: f64,
    pub theta1: f64,
    #[serde(default)]
    pub theta2: f64,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default = "default_psi_form")]
    pub psi_form: PsiForm,
    #[serde(default = "default_phi_form")]
    pub phi_form: PhiForm,
    #[serde(default = "default_drift_multiplier")]
    pub drift_multiplier: f64,
}

impl ModelSpec {
    pub fn new(r: f64, theta1: f64, theta2: f64, sigma: f64, phi_form: PhiForm) -> Result<Self> {
        let spec = Self {
            r,
            theta1,
            theta2,
            sigma,
            psi_form: PsiForm::PowerLaw,
            phi_form,
            drift_multiplier: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The canonical example: Psi(s) = |s|^{r-1} s, Phi(s) = sigma * s.
    pub fn porous(r: f64, theta1: f64, sigma: f64) -> Result<Self> {
        Self::new(r, theta1, 0.0, sigma, PhiForm::Linear)
    }

    pub fn with_drift_multiplier(mut self, m: f64) -> Self {
        self.drift_multiplier = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "r must be > 1, got {}",
                self.r
            )));
        }
        if !(self.theta1 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "theta1 must be > 0, got {}",
                self.theta1
            )));
        }
        if !(self.theta2 >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "theta2 must be >= 0, got {}",
                self.theta2
            )));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        if !(self.drift_multiplier >= 0.0) || !self.drift_multiplier.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "drift_multiplier must be finite and >= 0, got {}",
                self.drift_multiplier
            )));
        }
        Ok(())
    }
}

/// Psi(s) = theta1 |s|^{r-1} s. Odd and strictly increasing.
#[inline]
pub fn psi(spec: &ModelSpec, s: f64) -> f64 {
    match spec.psi_form {
        PsiForm::PowerLaw => spec.theta1 * s.abs().powf(spec.r - 1.0) * s,
    }
}

/// Psi'(s) = r theta1 |s|^{r-1}.
#[inline]
pub fn psi_prime(spec: &ModelSpec, s: f64) -> f64 {
    spec.r * spec.theta1 * s.abs().powf(spec.r - 1.0)
}

/// Jacobian-only regularization of Psi' near s = 0: the residual everywhere
/// uses the exact Psi, only the Newton matrix sees (|s| + eta)^{r-1}.
#[inline]
pub(crate) fn psi_prime_regularized(spec: &ModelSpec, s: f64, eta: f64) -> f64 {
    spec.r * spec.theta1 * (s.abs() + eta).powf(spec.r - 1.0)
}

/// Phi per the selected form.
#[inline]
pub fn phi(spec: &ModelSpec, s: f64) -> f64 {
    match spec.phi_form {
        PhiForm::Linear => spec.sigma * s,
        PhiForm::PowerPlusLinear => spec.theta2 * s.abs().powf(spec.r - 1.0) * s + spec.sigma * s,
    }
}

/// Drift b(f) = drift_multiplier * (L Psi(f) + Phi(f)), nodewise Psi/Phi.
pub fn drift(spec: &ModelSpec, f: &Field, d: &Discretization) -> Result<Field> {
    let psi_f = Field::from_values(f.values().iter().map(|&s| psi(spec, s)).collect(), d)
        .map_err(|_| Error::NonFinite("drift: Psi overflow"))?;
    let mut out = apply_l(&psi_f, d)?;
    for (o, &s) in out.values_mut().iter_mut().zip(f.values()) {
        *o = spec.drift_multiplier * (*o + phi(spec, s));
    }
    if out.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("drift"));
    }
    Ok(out)
}

/// Empirical constants extracted by [`validate_model`].
#[derive(Debug, Clone)]
pub struct ConditionReport {
    /// Worst ratio (s-t)(Psi(s)-Psi(t)) / |s-t|^{r+1} over scalar pairs.
    pub empirical_theta1: f64,
    /// Fitted smallest (theta2, sigma) with |Phi(s)-Phi(t)| <= theta2 |s-t|^r + sigma |s-t|.
    pub theta2_hat: f64,
    pub sigma_hat: f64,
    /// Fitted dissipativity constants: pairing <= -alpha_hat/2 * ||.||_{r+1}^{r+1} + c_hat ||.||_H^2.
    pub monotonicity_alpha_hat: f64,
    pub monotonicity_c_hat: f64,
    /// Measured operator norm of (-L)^{-1} on L^{r+1}(m).
    pub op_norm_inv_l: f64,
    pub gate_ok: bool,
    pub samples: usize,
    pub pass: bool,
    /// Human-readable names of the inequalities that failed, if any.
    pub failures: Vec<String>,
}

fn sample_scale(rng: &mut ChaCha8Rng) -> f64 {
    10f64.powf(rng.random_range(-2.0..2.0))
}

fn random_scaled_field(d: &Discretization, scale: f64, rng: &mut ChaCha8Rng) -> Field {
    let values = (0..d.n_points())
        .map(|_| scale * rng.random_range(-1.0f64..1.0))
        .collect();
    Field::from_values(values, d).expect("bounded random values are finite")
}

/// Measures the operator norm of (-L)^{-1} on L^{r+1}(m) by random sampling
/// plus a few power-iteration refinements.
pub fn op_norm_inv_l(d: &Discretization, r: f64, seed: u64) -> f64 {
    let p = r + 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6f70_6e6f_726d);
    let mut best = 0.0f64;
    let mut best_field: Option<Field> = None;
    for _ in 0..32 {
        let f = random_scaled_field(d, 1.0, &mut rng);
        let nf = norm_lp(&f, p, d).unwrap();
        if nf == 0.0 {
            continue;
        }
        let g = solve_neg_l(&f, d).unwrap();
        let ratio = norm_lp(&g, p, d).unwrap() / nf;
        if ratio > best {
            best = ratio;
            best_field = Some(f);
        }
    }
    if let Some(mut f) = best_field {
        for _ in 0..5 {
            let mut g = solve_neg_l(&f, d).unwrap();
            let ng = norm_lp(&g, p, d).unwrap();
            if ng == 0.0 {
                break;
            }
            best = best.max(ng / norm_lp(&f, p, d).unwrap());
            g.scale(1.0 / ng);
            f = g;
        }
    }
    best
}

/// Fit the smallest (theta2, sigma) with theta2*x_i + sigma*y_i >= z_i over
/// all sample triples, minimizing theta2 + sigma. Two-variable LP solved by a
/// parametric scan over theta2.
fn fit_lipschitz(samples: &[(f64, f64, f64)]) -> (f64, f64) {
    let sigma_needed = |theta2: f64| -> f64 {
        samples
            .iter()
            .map(|&(x, y, z)| if y > 0.0 { (z - theta2 * x) / y } else { 0.0 })
            .fold(0.0f64, f64::max)
    };
    let theta2_max = samples
        .iter()
        .filter(|&&(x, _, _)| x > 0.0)
        .map(|&(x, _, z)| z / x)
        .fold(0.0f64, f64::max);
    let mut best = (0.0, sigma_needed(0.0));
    if theta2_max > 0.0 {
        for i in 0..=160 {
            let t = theta2_max * 10f64.powf(-8.0 + 8.0 * i as f64 / 160.0);
            let s = sigma_needed(t);
            if t + s < best.0 + best.1 {
                best = (t, s);
            }
        }
    }
    best
}

/// Draws random scalar and field pairs and checks the declared structure:
/// the scalar monotonicity ratio of Psi, the Lipschitz description of Phi,
/// the dissipativity pairing, and the admissibility gate. A failing model
/// reports `pass = false` rather than erroring.
pub fn validate_model(
    spec: &ModelSpec,
    d: &Discretization,
    sample_count: usize,
    seed: u64,
) -> Result<ConditionReport> {
    spec.validate()?;
    if sample_count < 100 {
        return Err(Error::InvalidParameter(format!(
            "validate_model needs sample_count >= 100, got {sample_count}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x76_616c);

    // Scalar pairs at mixed scales.
    let n_scalar = sample_count * 10;
    let mut empirical_theta1 = f64::INFINITY;
    let mut lip = Vec::with_capacity(n_scalar);
    for _ in 0..n_scalar {
        let scale = sample_scale(&mut rng);
        let s = scale * rng.random_range(-1.0f64..1.0);
        let t = scale * rng.random_range(-1.0f64..1.0);
        if s == t {
            continue;
        }
        let dpsi = (s - t) * (psi(spec, s) - psi(spec, t));
        let denom = (s - t).abs().powf(spec.r + 1.0);
        if denom > 0.0 && dpsi.is_finite() {
            empirical_theta1 = empirical_theta1.min(dpsi / denom);
        }
        let z = (phi(spec, s) - phi(spec, t)).abs();
        lip.push(((s - t).abs().powf(spec.r), (s - t).abs(), z));
    }
    let (theta2_hat, sigma_hat) = fit_lipschitz(&lip);

    // Field pairs: pairing = -<du, dPsi>_{L2} + <(-L)^{-1} du, dPhi>_{L2}
    // must admit pairing <= -alpha ||du||_{r+1}^{r+1} + c ||du||_H^2.
    let mut alpha_hat = f64::INFINITY;
    let mut rows = Vec::with_capacity(sample_count);
    for _ in 0..sample_count {
        let scale = sample_scale(&mut rng);
        let u = random_scaled_field(d, scale, &mut rng);
        let v = random_scaled_field(d, scale, &mut rng);
        let du = u.sub(&v);
        if du.max_abs() == 0.0 {
            continue;
        }
        let dpsi = Field::from_values(
            u.values()
                .iter()
                .zip(v.values())
                .map(|(&a, &b)| psi(spec, a) - psi(spec, b))
                .collect(),
            d,
        )?;
        let dphi = Field::from_values(
            u.values()
                .iter()
                .zip(v.values())
                .map(|(&a, &b)| phi(spec, a) - phi(spec, b))
                .collect(),
            d,
        )?;
        let psi_term = inner_l2(&du, &dpsi, d)?;
        let inv_du = solve_neg_l(&du, d)?;
        let phi_term = inner_l2(&inv_du, &dphi, d)?;
        let a = norm_lp(&du, spec.r + 1.0, d)?.powf(spec.r + 1.0);
        let b = norm_h(&du, d)?.powi(2);
        if a > 0.0 && b > 0.0 {
            alpha_hat = alpha_hat.min(psi_term / a);
            rows.push((psi_term, phi_term, a, b));
        }
    }
    if !alpha_hat.is_finite() {
        alpha_hat = 0.0;
    }
    // Keep half the monotonicity budget, charge the rest to the H^2 term.
    let alpha_used = 0.5 * alpha_hat;
    let c_hat = rows
        .iter()
        .map(|&(psi_term, phi_term, a, b)| (phi_term - psi_term + alpha_used * a) / b)
        .fold(0.0f64, f64::max);

    let op_norm = op_norm_inv_l(d, spec.r, seed);
    let gate_ok = spec.theta1 > spec.theta2 * op_norm;

    let mut failures = Vec::new();
    let theta1_floor = 0.95 * 2f64.powf(1.0 - spec.r) * spec.theta1;
    if empirical_theta1 < theta1_floor {
        failures.push(format!(
            "scalar monotonicity: worst ratio {empirical_theta1:.6e} < 0.95 * 2^(1-r) theta1 = {theta1_floor:.6e}"
        ));
    }
    if !gate_ok {
        failures.push(format!(
            "admissibility gate: theta1 = {} <= theta2 * ||(-L)^-1||_{{r+1}} = {:.6e}",
            spec.theta1,
            spec.theta2 * op_norm
        ));
    }
    if !(alpha_hat > 0.0) {
        failures.push("dissipativity: no positive alpha fits the sampled pairs".into());
    }
    if spec.phi_form == PhiForm::Linear {
        // For the linear form the declared constants are exact descriptors.
        if sigma_hat > 1.05 * spec.sigma + 1e-12 {
            failures.push(format!(
                "Lipschitz: fitted sigma {sigma_hat:.6e} exceeds declared {} by more than 5%",
                spec.sigma
            ));
        }
        if theta2_hat > 1.05 * spec.theta2 + 1e-9 {
            failures.push(format!(
                "Lipschitz: fitted theta2 {theta2_hat:.6e} exceeds declared {}",
                spec.theta2
            ));
        }
    }

    Ok(ConditionReport {
        empirical_theta1,
        theta2_hat,
        sigma_hat,
        monotonicity_alpha_hat: alpha_hat,
        monotonicity_c_hat: c_hat,
        op_norm_inv_l: op_norm,
        gate_ok,
        samples: sample_count,
        pass: failures.is_empty(),
        failures,
    })
}
