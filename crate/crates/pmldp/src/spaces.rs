//! Spatial discretization of the unit interval.
//!
//! The state space is E = [0,1] with Lebesgue measure m (a probability
//! measure) and L the Dirichlet Laplacian, discretized by second differences
//! on M interior nodes x_j = j*h, h = 1/(M+1). Quadrature is the nodal rule
//! with weight h, under which the discrete sine modes
//!
//!   e_k(x_j) = sqrt(2) sin(k pi x_j),   mu_k = -(2/h^2)(1 - cos(k pi h)),
//!
//! are exactly orthonormal in L^2(m) and diagonalize L. Three norms are in
//! play: `norm_lp` for L^p(m), and `norm_h` for H = H^{-1} with
//! ||f||_H^2 = <f, (-L)^{-1} f>_{L^2(m)}.

use crate::error::{Error, Result};

/// Grid and time-step data shared by every module.
///
/// Immutable after construction; all operations on it are pure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discretization {
    n_points: usize,
    h: f64,
    t_final: f64,
    n_steps: usize,
    dt: f64,
    lambda0: f64,
}

impl Discretization {
    /// `n_points` = M interior nodes, `n_steps` = K time steps over [0, T].
    pub fn new(n_points: usize, n_steps: usize, t_final: f64) -> Result<Self> {
        if n_points == 0 {
            return Err(Error::InvalidParameter("M must be positive".into()));
        }
        if n_steps == 0 {
            return Err(Error::InvalidParameter("K must be positive".into()));
        }
        if !(t_final > 0.0) || !t_final.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "T must be positive, got {t_final}"
            )));
        }
        let h = 1.0 / (n_points as f64 + 1.0);
        // 2(1-cos x)/h^2 written as (2 sin(x/2)/h)^2 to dodge cancellation.
        let s = (std::f64::consts::PI * h / 2.0).sin();
        let lambda0 = 4.0 / (h * h) * s * s;
        Ok(Self {
            n_points,
            h,
            t_final,
            n_steps,
            dt: t_final / n_steps as f64,
            lambda0,
        })
    }

    #[inline]
    pub fn n_points(&self) -> usize {
        self.n_points
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }

    #[inline]
    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    #[inline]
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Smallest |eigenvalue| of -L on this mesh, (2/h^2)(1 - cos(pi h)).
    #[inline]
    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    /// Discrete eigenvalue mu_k (negative) of L for mode k, 1 <= k <= M.
    #[inline]
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let s = (k as f64 * std::f64::consts::PI * self.h / 2.0).sin();
        -(4.0 / (self.h * self.h)) * s * s
    }

    fn check_conforms(&self, f: &Field) -> Result<()> {
        if f.values.len() != self.n_points {
            return Err(Error::DimensionMismatch {
                expected: self.n_points,
                found: f.values.len(),
            });
        }
        Ok(())
    }
}

/// Nodal values of a grid function on the interior nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(d: &Discretization) -> Self {
        Self {
            values: vec![0.0; d.n_points()],
        }
    }

    pub fn from_values(values: Vec<f64>, d: &Discretization) -> Result<Self> {
        if values.len() != d.n_points() {
            return Err(Error::DimensionMismatch {
                expected: d.n_points(),
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Field::from_values"));
        }
        Ok(Self { values })
    }

    /// Finite sine-mode expansion sum_k c_k e_k with orthonormal modes.
    pub fn from_modes(modes: &[(usize, f64)], d: &Discretization) -> Result<Self> {
        let mut out = Field::zeros(d);
        for &(k, c) in modes {
            let mode = orthonormal_mode(k, d)?;
            out.axpy(c, &mode);
        }
        Ok(out)
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// self += c * other
    pub fn axpy(&mut self, c: f64, other: &Field) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in &mut self.values {
            *a *= c;
        }
    }

    pub fn sub(&self, other: &Field) -> Field {
        debug_assert_eq!(self.values.len(), other.values.len());
        Field {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Second-difference Dirichlet Laplacian: (Lf)_j = (f_{j-1} - 2 f_j + f_{j+1})/h^2
/// with f_0 = f_{M+1} = 0.
pub fn apply_l(f: &Field, d: &Discretization) -> Result<Field> {
    d.check_conforms(f)?;
    let m = d.n_points();
    let inv_h2 = 1.0 / (d.h() * d.h());
    let v = f.values();
    let mut out = vec![0.0; m];
    for j in 0..m {
        let left = if j > 0 { v[j - 1] } else { 0.0 };
        let right = if j + 1 < m { v[j + 1] } else { 0.0 };
        out[j] = (left - 2.0 * v[j] + right) * inv_h2;
    }
    Ok(Field { values: out })
}

/// Applies (-L)^{-1} by a direct tridiagonal solve: returns g with
/// apply_l(g) = -f.
pub fn solve_neg_l(f: &Field, d: &Discretization) -> Result<Field> {
    d.check_conforms(f)?;
    let inv_h2 = 1.0 / (d.h() * d.h());
    let m = d.n_points();
    let lower = vec![-inv_h2; m.saturating_sub(1)];
    let diag = vec![2.0 * inv_h2; m];
    let upper = vec![-inv_h2; m.saturating_sub(1)];
    let g = solve_tridiagonal(&lower, &diag, &upper, f.values())?;
    Ok(Field { values: g })
}

/// Thomas algorithm for a general tridiagonal system.
///
/// `lower[i]` multiplies x_{i} in row i+1, `upper[i]` multiplies x_{i+1} in
/// row i. No pivoting; the systems solved here (shifted negative Laplacians)
/// keep the elimination stable.
pub(crate) fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let n = diag.len();
    debug_assert_eq!(rhs.len(), n);
    debug_assert_eq!(lower.len(), n.saturating_sub(1));
    debug_assert_eq!(upper.len(), n.saturating_sub(1));
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    let mut denom = diag[0];
    if denom == 0.0 {
        return Err(Error::Numerical("tridiagonal solve: zero pivot".into()));
    }
    if n > 1 {
        c_prime[0] = upper[0] / denom;
    }
    d_prime[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - lower[i - 1] * c_prime[i - 1];
        if denom == 0.0 {
            return Err(Error::Numerical("tridiagonal solve: zero pivot".into()));
        }
        if i + 1 < n {
            c_prime[i] = upper[i] / denom;
        }
        d_prime[i] = (rhs[i] - lower[i - 1] * d_prime[i - 1]) / denom;
    }
    let mut x = d_prime;
    for i in (0..n.saturating_sub(1)).rev() {
        let next = x[i + 1];
        x[i] -= c_prime[i] * next;
    }
    Ok(x)
}

/// Weighted inner product <f, g>_{L^2(m)} = h sum_j f_j g_j.
pub fn inner_l2(f: &Field, g: &Field, d: &Discretization) -> Result<f64> {
    d.check_conforms(f)?;
    d.check_conforms(g)?;
    let s: f64 = f.values().iter().zip(g.values()).map(|(a, b)| a * b).sum();
    Ok(d.h() * s)
}

/// H = H^{-1} norm: ||f||_H = sqrt(<f, (-L)^{-1} f>_{L^2(m)}).
pub fn norm_h(f: &Field, d: &Discretization) -> Result<f64> {
    let g = solve_neg_l(f, d)?;
    let sq = inner_l2(f, &g, d)?;
    Ok(sq.max(0.0).sqrt())
}

/// L^p(m) norm, (h sum |f_j|^p)^{1/p}, p >= 1.
pub fn norm_lp(f: &Field, p: f64, d: &Discretization) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "L^p norm needs p >= 1, got {p}"
        )));
    }
    d.check_conforms(f)?;
    if p == 2.0 {
        let s: f64 = f.values().iter().map(|v| v * v).sum();
        return Ok((d.h() * s).sqrt());
    }
    let s: f64 = f.values().iter().map(|v| v.abs().powf(p)).sum();
    Ok((d.h() * s).powf(1.0 / p))
}

/// Raw discrete sine eigenpair: e_k(x_j) = sqrt(2) sin(k pi x_j) and its
/// eigenvalue mu_k. 1 <= k <= M.
pub fn eigen_mode(k: usize, d: &Discretization) -> Result<(Field, f64)> {
    if k == 0 || k > d.n_points() {
        return Err(Error::InvalidParameter(format!(
            "mode index {k} out of range 1..={}",
            d.n_points()
        )));
    }
    let sqrt2 = std::f64::consts::SQRT_2;
    // sin(k pi j h) has period 2(M+1) in the integer phase k*j; reducing the
    // phase exactly keeps the argument small and the samples accurate at
    // large k*j.
    let period = 2 * (d.n_points() + 1);
    let values = (1..=d.n_points())
        .map(|j| {
            let phase = (k * j) % period;
            sqrt2 * (std::f64::consts::PI * phase as f64 * d.h()).sin()
        })
        .collect();
    Ok((Field { values }, d.eigenvalue(k)))
}

/// Sine mode normalized to unit discrete L^2(m) norm. With the nodal
/// quadrature the raw modes are already orthonormal up to rounding; the
/// explicit normalization pins it exactly.
pub fn orthonormal_mode(k: usize, d: &Discretization) -> Result<Field> {
    let (mut e, _) = eigen_mode(k, d)?;
    let n = norm_lp(&e, 2.0, d)?;
    e.scale(1.0 / n);
    Ok(e)
}

/// First `n` orthonormal sine modes, cached by callers that loop over steps.
pub fn orthonormal_modes(n: usize, d: &Discretization) -> Result<Vec<Field>> {
    (1..=n).map(|k| orthonormal_mode(k, d)).collect()
}

/// Coefficient <f, e_k>_{L^2(m)} against the orthonormal mode e_k.
pub fn mode_coeff(f: &Field, k: usize, d: &Discretization) -> Result<f64> {
    let e = orthonormal_mode(k, d)?;
    inner_l2(f, &e, d)
}

/// Orthogonal projection onto span{e_1 .. e_n}. The modes diagonalize L in
/// both the L^2 and H inner products, so the L^2 and H projections coincide.
/// n = 0 projects to zero; n > M is an error.
pub fn project(f: &Field, n: usize, d: &Discretization) -> Result<Field> {
    if n > d.n_points() {
        return Err(Error::InvalidParameter(format!(
            "projection rank {n} exceeds grid size {}",
            d.n_points()
        )));
    }
    d.check_conforms(f)?;
    let mut out = Field::zeros(d);
    for k in 1..=n {
        let e = orthonormal_mode(k, d)?;
        let c = inner_l2(f, &e, d)?;
        out.axpy(c, &e);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(m: usize) -> Discretization {
        Discretization::new(m, 10, 1.0).unwrap()
    }

    fn random_field(d: &Discretization, rng: &mut ChaCha8Rng) -> Field {
        let values = (0..d.n_points())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Field::from_values(values, d).unwrap()
    }

    /// Dense Gaussian-elimination oracle for the tridiagonal Laplacian,
    /// independent of the Thomas-solve code path.
    fn dense_laplacian(d: &Discretization) -> Vec<Vec<f64>> {
        let m = d.n_points();
        let inv_h2 = 1.0 / (d.h() * d.h());
        let mut a = vec![vec![0.0; m]; m];
        for j in 0..m {
            a[j][j] = -2.0 * inv_h2;
            if j > 0 {
                a[j][j - 1] = inv_h2;
            }
            if j + 1 < m {
                a[j][j + 1] = inv_h2;
            }
        }
        a
    }

    fn dense_matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter()
            .map(|row| row.iter().zip(x).map(|(r, v)| r * v).sum())
            .collect()
    }

    fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m: Vec<Vec<f64>> = a.iter().cloned().collect();
        let mut rhs = b.to_vec();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
                .unwrap();
            m.swap(col, piv);
            rhs.swap(col, piv);
            let p = m[col][col];
            for row in col + 1..n {
                let f = m[row][col] / p;
                for c in col..n {
                    m[row][c] -= f * m[col][c];
                }
                rhs[row] -= f * rhs[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let mut s = rhs[row];
            for c in row + 1..n {
                s -= m[row][c] * x[c];
            }
            x[row] = s / m[row][row];
        }
        x
    }

    #[test]
    fn grid_invariants() {
        for m in [3, 15, 63] {
            let d = grid(m);
            assert!((d.h() * (m as f64 + 1.0) - 1.0).abs() < 1e-15);
            assert!((d.dt() * d.n_steps() as f64 - d.t_final()).abs() < 1e-12);
            assert!(d.lambda0() > 0.0);
            assert!((d.lambda0() + d.eigenvalue(1)).abs() < 1e-12);
        }
    }

    #[test]
    fn apply_l_eigenpair_m3() {
        let d = grid(3);
        let (f, mu1) = eigen_mode(1, &d).unwrap();
        let expected = -32.0 * (1.0 - (std::f64::consts::PI / 4.0).cos());
        assert!((mu1 - expected).abs() < 1e-12, "mu1 = {mu1}");
        assert!((mu1 + 9.3726).abs() < 1e-3);
        let lf = apply_l(&f, &d).unwrap();
        for (a, b) in lf.values().iter().zip(f.values()) {
            assert!((a - mu1 * b).abs() < 1e-10);
        }
    }

    #[test]
    fn apply_l_eigenpairs_all_k() {
        for m in [3, 31] {
            let d = grid(m);
            for k in 1..=m {
                let (f, mu) = eigen_mode(k, &d).unwrap();
                let lf = apply_l(&f, &d).unwrap();
                for (a, b) in lf.values().iter().zip(f.values()) {
                    assert!((a - mu * b).abs() < 1e-9 * mu.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn apply_l_zero_and_mismatch() {
        let d = grid(5);
        let z = Field::zeros(&d);
        assert_eq!(apply_l(&z, &d).unwrap().values(), z.values());
        let other = grid(7);
        assert!(matches!(
            apply_l(&Field::zeros(&other), &d),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn apply_l_matches_dense_matvec() {
        let d = grid(5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = random_field(&d, &mut rng);
        let a = dense_laplacian(&d);
        let oracle = dense_matvec(&a, f.values());
        let got = apply_l(&f, &d).unwrap();
        for (x, y) in got.values().iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn solve_neg_l_sine_mode_and_zero() {
        let d = grid(15);
        for k in [1, 4, 15] {
            let (f, mu) = eigen_mode(k, &d).unwrap();
            let g = solve_neg_l(&f, &d).unwrap();
            for (a, b) in g.values().iter().zip(f.values()) {
                assert!((a - b / mu.abs()).abs() < 1e-12);
            }
        }
        let z = Field::zeros(&d);
        assert_eq!(solve_neg_l(&z, &d).unwrap().values(), z.values());
    }

    #[test]
    fn solve_neg_l_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in [3, 15, 63] {
            let d = grid(m);
            for _ in 0..20 {
                let f = random_field(&d, &mut rng);
                let g = solve_neg_l(&f, &d).unwrap();
                let back = apply_l(&g, &d).unwrap();
                let scale = f.max_abs().max(1.0);
                for (a, b) in back.values().iter().zip(f.values()) {
                    assert!((a + b).abs() <= 1e-10 * scale, "round trip failed at M={m}");
                }
            }
        }
    }

    #[test]
    fn norm_h_sine_modes_and_dense_oracle() {
        let d = grid(15);
        for k in [1, 3, 15] {
            let e = orthonormal_mode(k, &d).unwrap();
            let mu = d.eigenvalue(k).abs();
            let n = norm_h(&e, &d).unwrap();
            assert!((n - 1.0 / mu.sqrt()).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_field(&d, &mut rng);
        let a = dense_laplacian(&d);
        let neg_a: Vec<Vec<f64>> = a
            .iter()
            .map(|row| row.iter().map(|v| -v).collect())
            .collect();
        let g = dense_solve(&neg_a, f.values());
        let oracle = (d.h() * f.values().iter().zip(&g).map(|(x, y)| x * y).sum::<f64>()).sqrt();
        assert!((norm_h(&f, &d).unwrap() - oracle).abs() < 1e-10);
        assert_eq!(norm_h(&Field::zeros(&d), &d).unwrap(), 0.0);
    }

    #[test]
    fn norm_lp_examples() {
        let d99 = grid(99);
        let f = Field::from_values(vec![2.0; 99], &d99).unwrap();
        let n = norm_lp(&f, 3.0, &d99).unwrap();
        assert!((n - 2.0 * 0.99f64.powf(1.0 / 3.0)).abs() < 1e-12);
        assert!((n - 1.99331).abs() < 1e-5);

        let d3 = grid(3);
        let x = Field::from_values(vec![0.25, 0.5, 0.75], &d3).unwrap();
        let n2 = norm_lp(&x, 2.0, &d3).unwrap();
        assert!((n2 - 0.21875f64.sqrt()).abs() < 1e-12);

        assert_eq!(norm_lp(&Field::zeros(&d3), 5.0, &d3).unwrap(), 0.0);
        assert!(matches!(
            norm_lp(&x, 0.5, &d3),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn eigen_mode_values_and_range() {
        let d = grid(3);
        let (e1, _) = eigen_mode(1, &d).unwrap();
        let s = std::f64::consts::SQRT_2;
        let pi = std::f64::consts::PI;
        let expect = [
            s * (pi / 4.0).sin(),
            s * (pi / 2.0).sin(),
            s * (3.0 * pi / 4.0).sin(),
        ];
        for (a, b) in e1.values().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(eigen_mode(4, &d).is_err());
        assert!(eigen_mode(0, &d).is_err());
        let (e2, _) = eigen_mode(2, &d).unwrap();
        assert!(inner_l2(&e1, &e2, &d).unwrap().abs() < 1e-12);
    }

    #[test]
    fn modes_are_orthonormal_under_nodal_quadrature() {
        let d = grid(31);
        for k in 1..=31 {
            let e = orthonormal_mode(k, &d).unwrap();
            assert!((norm_lp(&e, 2.0, &d).unwrap() - 1.0).abs() < 1e-12);
        }
        let e1 = orthonormal_mode(1, &d).unwrap();
        let e5 = orthonormal_mode(5, &d).unwrap();
        assert!(inner_l2(&e1, &e5, &d).unwrap().abs() < 1e-12);
    }

    #[test]
    fn project_idempotent_orthogonal_complete() {
        let d = grid(15);
        let e1 = orthonormal_mode(1, &d).unwrap();
        let p = project(&e1, 1, &d).unwrap();
        for (a, b) in p.values().iter().zip(e1.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let e2 = orthonormal_mode(2, &d).unwrap();
        let p2 = project(&e2, 1, &d).unwrap();
        assert!(p2.max_abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_field(&d, &mut rng);
        let full = project(&f, 15, &d).unwrap();
        for (a, b) in full.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(project(&f, 16, &d).is_err());

        let pp = project(&project(&f, 4, &d).unwrap(), 4, &d).unwrap();
        let p4 = project(&f, 4, &d).unwrap();
        for (a, b) in pp.values().iter().zip(p4.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_contracts_l2_and_h() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let d = grid(31);
        for _ in 0..20 {
            let f = random_field(&d, &mut rng);
            for n in [1, 5, 16, 31] {
                let p = project(&f, n, &d).unwrap();
                assert!(norm_lp(&p, 2.0, &d).unwrap() <= norm_lp(&f, 2.0, &d).unwrap() + 1e-12);
                assert!(norm_h(&p, &d).unwrap() <= norm_h(&f, &d).unwrap() + 1e-12);
            }
        }
    }

    #[test]
    fn lp_dominates_h_norm() {
        // ||f||_{r+1} >= 0.9 sqrt(lambda0) ||f||_H for the exponents in use.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for m in [15, 63] {
            let d = grid(m);
            let c0 = 0.9 * d.lambda0().sqrt();
            for _ in 0..30 {
                let f = random_field(&d, &mut rng);
                for r in [2.0, 3.0, 5.0] {
                    let lp = norm_lp(&f, r + 1.0, &d).unwrap();
                    let h = norm_h(&f, &d).unwrap();
                    assert!(lp >= c0 * h, "comparability failed: {lp} < {c0} * {h}");
                }
            }
        }
    }

    #[test]
    fn eigenvalue_converges_to_continuum() {
        let pi = std::f64::consts::PI;
        for m in [31, 63, 127] {
            let d = grid(m);
            let mu1 = d.eigenvalue(1);
            let bound = pi.powi(4) * d.h() * d.h() / 12.0 * 1.1;
            assert!(
                (mu1 + pi * pi).abs() <= bound,
                "M={m}: {} > {bound}",
                (mu1 + pi * pi).abs()
            );
        }
    }

    #[test]
    fn from_modes_matches_manual_sum() {
        let d = grid(15);
        let f = Field::from_modes(&[(1, 0.5), (3, -0.2)], &d).unwrap();
        let mut g = Field::zeros(&d);
        g.axpy(0.5, &orthonormal_mode(1, &d).unwrap());
        g.axpy(-0.2, &orthonormal_mode(3, &d).unwrap());
        assert_eq!(f, g);
        assert!(Field::from_modes(&[(99, 1.0)], &d).is_err());
    }

    #[test]
    fn from_values_rejects_non_finite() {
        let d = grid(3);
        assert!(Field::from_values(vec![0.0, f64::NAN, 0.0], &d).is_err());
        assert!(Field::from_values(vec![0.0; 2], &d).is_err());
    }
}
