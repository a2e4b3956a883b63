//! (kappa, gamma)-strong stability certificates for the sampled closed loop
//! `I + h (A - B K)`, plus LQR synthesis of the fixed stabilizing gain.
//!
//! A certificate is a similarity `P` with `I + h(A - BK) = P L_h P^{-1}`,
//! `||L_h|| <= 1 - h gamma` and `||K||, ||P||, ||P^{-1}|| <= kappa`. `P` is
//! built once from the real eigen-structure of `A - BK`, so the same `P`
//! serves every sample interval; `L_h` is then re-measured at each `h`
//! checked (`h`, `h/2`, `h/4`).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{condition_number, matrix_powers, solve_continuous_lyapunov, spectral_abscissa, spectral_norm};
use crate::linsys::SystemDynamics;

/// Eigenvector matrices above this condition number are replaced by the
/// scaled Schur construction.
pub const EIGENBASIS_MAX_CONDITION: f64 = 1e6;
/// Geometric ratio of the kappa grid.
pub const KAPPA_GRID_RATIO: f64 = 1.25;
/// Number of linear points in the gamma grid.
pub const GAMMA_GRID_POINTS: usize = 32;
/// Sample intervals verified for a certificate at `h`, as fractions of `h`.
pub const VERIFIED_FRACTIONS: [f64; 3] = [1.0, 0.5, 0.25];

const CERT_TOL: f64 = 1e-12;
const KAPPA_GRID_MAX_STEPS: usize = 400;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Construction {
    /// Real (block) eigenvector basis, column balanced.
    Eigenbasis,
    /// Schur vectors with a geometric diagonal rescaling.
    ScaledSchur,
}

/// Similarity transform for a closed-loop matrix, independent of `h`.
#[derive(Clone, Debug)]
pub struct Similarity {
    pub p: DMatrix<f64>,
    pub p_inv: DMatrix<f64>,
    pub construction: Construction,
    /// Condition number of the basis before scaling.
    pub condition: f64,
}

impl Similarity {
    /// `L_h = P^{-1} (I + h M) P` for closed-loop matrix `M`.
    pub fn transformed(&self, closed_loop: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
        let n = closed_loop.nrows();
        let qh = DMatrix::identity(n, n) + closed_loop * h;
        &self.p_inv * qh * &self.p
    }
}

#[derive(Clone, Debug)]
pub struct StablePolicyCert {
    pub gain: DMatrix<f64>,
    pub kappa: f64,
    pub gamma: f64,
    pub p: DMatrix<f64>,
    pub p_inv: DMatrix<f64>,
    /// Largest sample interval the certificate was verified at.
    pub h_max: f64,
    /// `(h, ||L_h||)` for every verified interval.
    pub verified: Vec<(f64, f64)>,
    pub construction: Construction,
}

impl StablePolicyCert {
    /// `kappa^2 (1 - h gamma)^i`, the bound on `||(I + h(A-BK))^i||`.
    pub fn power_bound(&self, h: f64, i: usize) -> f64 {
        self.kappa * self.kappa * (1.0 - h * self.gamma).powi(i as i32)
    }

    pub fn covers(&self, h: f64) -> bool {
        self.verified.iter().any(|(hv, _)| (hv - h).abs() <= 1e-12 * h.max(1.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Condition {
    /// `||L_h|| <= 1 - h gamma` failed at this `h`.
    Contraction { h: f64 },
    GainNorm,
    TransformNorm,
    InverseTransformNorm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Refusal {
    pub condition: Condition,
    pub measured: f64,
    pub limit: f64,
}

impl std::fmt::Display for Refusal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.condition {
            Condition::Contraction { h } => write!(f, "||L_h|| = {:.6} > {:.6} at h = {h}", self.measured, self.limit),
            Condition::GainNorm => write!(f, "||K|| = {:.6} > kappa = {:.6}", self.measured, self.limit),
            Condition::TransformNorm => write!(f, "||P|| = {:.6} > kappa = {:.6}", self.measured, self.limit),
            Condition::InverseTransformNorm => {
                write!(f, "||P^-1|| = {:.6} > kappa = {:.6}", self.measured, self.limit)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub enum Certification {
    Accepted(StablePolicyCert),
    Refused(Refusal),
}

impl Certification {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Certification::Accepted(_))
    }

    pub fn accepted(self) -> Option<StablePolicyCert> {
        match self {
            Certification::Accepted(c) => Some(c),
            Certification::Refused(_) => None,
        }
    }
}

/// Builds `P` for the closed-loop matrix `m`. `h` only steers the choice of
/// the diagonal scaling when the Schur fallback is needed.
pub fn similarity_transform(m: &DMatrix<f64>, h: f64) -> Result<Similarity> {
    let n = m.nrows();
    if !m.is_square() || n == 0 {
        return Err(Error::dim("closed-loop matrix must be square"));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::CertificationInfeasible("closed-loop matrix is not finite".into()));
    }
    let scale = m.amax().max(1.0);
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::CertificationInfeasible("real Schur decomposition did not converge".into()))?;
    let (q, t) = schur.unpack();
    let blocks = quasi_triangular_blocks(&t, scale);

    if let Some(v) = real_eigenbasis(&q, &t, &blocks, scale) {
        let cond = condition_number(&v);
        if cond.is_finite() && cond <= EIGENBASIS_MAX_CONDITION {
            if let Some(sim) = balanced(v, Construction::Eigenbasis, cond) {
                return Ok(sim);
            }
        }
    }

    // Scaled Schur: P = Q diag(delta^b), shrinking the strictly upper part of T.
    let nb = blocks.len();
    let mut best: Option<(f64, Similarity)> = None;
    let mut delta: f64 = 1.0;
    loop {
        let cond = if nb > 1 { delta.powi(-((nb - 1) as i32)) } else { 1.0 };
        if cond > EIGENBASIS_MAX_CONDITION {
            break;
        }
        let mut d = DVector::zeros(n);
        for (bi, &(start, size)) in blocks.iter().enumerate() {
            for k in start..start + size {
                d[k] = delta.powi(bi as i32);
            }
        }
        let v = &q * DMatrix::from_diagonal(&d);
        if let Some(sim) = balanced(v, Construction::ScaledSchur, cond) {
            let norm = spectral_norm(&sim.transformed(m, h));
            if best.as_ref().is_none_or(|(b, _)| norm < *b) {
                best = Some((norm, sim));
            }
        }
        if nb <= 1 {
            break;
        }
        delta *= 0.5;
    }
    let (norm, sim) = best.ok_or_else(|| Error::CertificationInfeasible("no invertible scaled Schur basis".into()))?;
    let qh = DMatrix::identity(n, n) + m * h;
    let radius = qh
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    if norm >= 1.0 && radius < 1.0 {
        return Err(Error::CertificationInfeasible(format!(
            "closed loop contracts (spectral radius {radius:.6}) but no basis with condition <= {EIGENBASIS_MAX_CONDITION:.0e} exhibits it"
        )));
    }
    Ok(sim)
}

fn balanced(v: DMatrix<f64>, construction: Construction, condition: f64) -> Option<Similarity> {
    let sv = v.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(smin > 0.0) {
        return None;
    }
    // Equalize ||P|| and ||P^-1|| at sqrt(cond).
    let c = 1.0 / (smax * smin).sqrt();
    let p = v * c;
    let p_inv = p.clone().try_inverse()?;
    let n = p.nrows();
    if (&p * &p_inv - DMatrix::<f64>::identity(n, n)).amax() > 1e-10 {
        return None;
    }
    Some(Similarity {
        p,
        p_inv,
        construction,
        condition,
    })
}

fn quasi_triangular_blocks(t: &DMatrix<f64>, scale: f64) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)].abs() > 1e-14 * scale {
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }
    blocks
}

/// Real eigenvector basis from the Schur form: block-diagonalize `T` by
/// Sylvester solves, then bring every 2x2 block to `[[s, w], [-w, s]]`.
/// Returns `None` when two blocks share (numerically) the same spectrum with
/// nonzero coupling, or when a 2x2 block is defective.
fn real_eigenbasis(q: &DMatrix<f64>, t: &DMatrix<f64>, blocks: &[(usize, usize)], scale: f64) -> Option<DMatrix<f64>> {
    let n = t.nrows();
    let mut y = DMatrix::<f64>::identity(n, n);
    for j in 1..blocks.len() {
        let (sj, nj) = blocks[j];
        let tjj = t.view((sj, sj), (nj, nj)).into_owned();
        for i in (0..j).rev() {
            let (si, ni) = blocks[i];
            let tii = t.view((si, si), (ni, ni)).into_owned();
            let mut rhs = -t.view((si, sj), (ni, nj)).into_owned();
            for k in i + 1..j {
                let (sk, nk) = blocks[k];
                rhs -= t.view((si, sk), (ni, nk)) * y.view((sk, sj), (nk, nj));
            }
            let x = solve_small_sylvester(&tii, &tjj, &rhs, scale)?;
            y.view_mut((si, sj), (ni, nj)).copy_from(&x);
        }
    }

    let mut s = DMatrix::<f64>::zeros(n, n);
    for &(start, size) in blocks {
        if size == 1 {
            s[(start, start)] = 1.0;
            continue;
        }
        let b = t.view((start, start), (2, 2)).into_owned();
        let local = standardize_2x2(&b, scale)?;
        s.view_mut((start, start), (2, 2)).copy_from(&local);
    }

    let mut v = q * y * s;
    // Column balancing: unit columns, pairs scaled jointly to keep the rotation form.
    for &(start, size) in blocks {
        let norm = (0..size)
            .map(|k| v.column(start + k).norm_squared())
            .sum::<f64>()
            .sqrt()
            / (size as f64).sqrt();
        if !(norm > 0.0) {
            return None;
        }
        for k in 0..size {
            let mut col = v.column_mut(start + k);
            col /= norm;
        }
    }
    Some(v)
}

/// Solves `A X - X B = C` for blocks of size at most 2.
fn solve_small_sylvester(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, scale: f64) -> Option<DMatrix<f64>> {
    let (na, nb) = (a.nrows(), b.nrows());
    let op = DMatrix::<f64>::identity(nb, nb).kronecker(a) - b.transpose().kronecker(&DMatrix::<f64>::identity(na, na));
    let sep = op
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if sep <= 1e-10 * scale {
        if c.amax() <= 1e-13 * scale {
            return Some(DMatrix::zeros(na, nb));
        }
        return None;
    }
    let rhs = DVector::from_column_slice(c.as_slice());
    let x = op.lu().solve(&rhs)?;
    Some(DMatrix::from_column_slice(na, nb, x.as_slice()))
}

/// Basis for a 2x2 block: rotation-scaling form for complex eigenvalues,
/// diagonal form for distinct real ones.
fn standardize_2x2(b: &DMatrix<f64>, scale: f64) -> Option<DMatrix<f64>> {
    let (a11, a12, a21, a22) = (b[(0, 0)], b[(0, 1)], b[(1, 0)], b[(1, 1)]);
    let half_tr = 0.5 * (a11 + a22);
    let disc = 0.25 * (a11 - a22).powi(2) + a12 * a21;
    if disc < 0.0 {
        let sigma = half_tr;
        let omega = (-disc).sqrt();
        // eigenvector for sigma + i omega, written p + i q
        let (p, q) = if a12.abs() >= a21.abs() {
            (DVector::from_vec(vec![a12, sigma - a11]), DVector::from_vec(vec![0.0, omega]))
        } else {
            (DVector::from_vec(vec![sigma - a22, a21]), DVector::from_vec(vec![omega, 0.0]))
        };
        // rotate the eigenvector phase so that p is orthogonal to q
        let theta = 0.5 * (-2.0 * p.dot(&q)).atan2(p.norm_squared() - q.norm_squared());
        let (st, ct) = theta.sin_cos();
        let p2 = &p * ct - &q * st;
        let q2 = &p * st + &q * ct;
        let mut s = DMatrix::zeros(2, 2);
        s.set_column(0, &p2);
        s.set_column(1, &q2);
        return Some(s);
    }
    let root = disc.sqrt();
    if root <= 1e-10 * scale {
        // repeated real eigenvalue: fine only if the block is already scalar
        if a12.abs() <= 1e-13 * scale && a21.abs() <= 1e-13 * scale {
            return Some(DMatrix::identity(2, 2));
        }
        return None;
    }
    let mut s = DMatrix::zeros(2, 2);
    for (k, lambda) in [half_tr + root, half_tr - root].into_iter().enumerate() {
        let v = if (a11 - lambda).abs() + a12.abs() >= (a22 - lambda).abs() + a21.abs() {
            DVector::from_vec(vec![a12, lambda - a11])
        } else {
            DVector::from_vec(vec![lambda - a22, a21])
        };
        let nv = v.norm();
        if !(nv > 0.0) {
            return None;
        }
        s.set_column(k, &(v / nv));
    }
    Some(s)
}

/// Checks `(kappa, gamma)`-strong stability of `K` at `h`, `h/2` and `h/4`.
///
/// Returns `Refused` with the first violated condition when the certificate
/// does not hold; errors are reserved for malformed input and for closed
/// loops where no acceptable similarity exists.
pub fn certify(sys: &SystemDynamics, gain: &DMatrix<f64>, h: f64, kappa: f64, gamma: f64) -> Result<Certification> {
    sys.check_gain(gain)?;
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::invalid(format!("h must be positive, got {h}")));
    }
    if !(kappa >= 1.0) {
        return Err(Error::invalid(format!("kappa must be >= 1, got {kappa}")));
    }
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!("gamma must be > 0, got {gamma}")));
    }
    let m = sys.closed_loop(gain);
    let sim = similarity_transform(&m, h)?;
    let mut verified = Vec::with_capacity(VERIFIED_FRACTIONS.len());
    for frac in VERIFIED_FRACTIONS {
        let hv = h * frac;
        let norm = spectral_norm(&sim.transformed(&m, hv));
        let limit = 1.0 - hv * gamma;
        if norm > limit + CERT_TOL {
            return Ok(Certification::Refused(Refusal {
                condition: Condition::Contraction { h: hv },
                measured: norm,
                limit,
            }));
        }
        verified.push((hv, norm));
    }
    let checks = [
        (Condition::GainNorm, spectral_norm(gain)),
        (Condition::TransformNorm, spectral_norm(&sim.p)),
        (Condition::InverseTransformNorm, spectral_norm(&sim.p_inv)),
    ];
    for (condition, measured) in checks {
        if measured > kappa * (1.0 + CERT_TOL) {
            return Ok(Certification::Refused(Refusal {
                condition,
                measured,
                limit: kappa,
            }));
        }
    }
    Ok(Certification::Accepted(StablePolicyCert {
        gain: gain.clone(),
        kappa,
        gamma,
        p: sim.p,
        p_inv: sim.p_inv,
        h_max: h,
        verified,
        construction: sim.construction,
    }))
}

/// Certificate or a `CertificationMismatch` error naming the violated condition.
pub fn require_certificate(sys: &SystemDynamics, gain: &DMatrix<f64>, h: f64, kappa: f64, gamma: f64) -> Result<StablePolicyCert> {
    match certify(sys, gain, h, kappa, gamma)? {
        Certification::Accepted(c) => Ok(c),
        Certification::Refused(r) => Err(Error::CertificationMismatch { h, reason: r.to_string() }),
    }
}

/// Largest `gamma` accepted at `h`, `h/2`, `h/4` for the fixed similarity of `K`.
pub fn max_contraction_rate(sys: &SystemDynamics, gain: &DMatrix<f64>, h: f64) -> Result<f64> {
    let m = sys.closed_loop(gain);
    let sim = similarity_transform(&m, h)?;
    Ok(VERIFIED_FRACTIONS
        .iter()
        .map(|f| {
            let hv = h * f;
            (1.0 - spectral_norm(&sim.transformed(&m, hv))) / hv
        })
        .fold(f64::INFINITY, f64::min))
}

/// Smallest `kappa` on the grid `{1, 1.25, 1.25^2, ...}` and largest `gamma`
/// on a 32-point linear grid up to the measured contraction rate, such that
/// `certify` accepts.
pub fn best_certificate(sys: &SystemDynamics, gain: &DMatrix<f64>, h: f64) -> Result<(f64, f64)> {
    sys.check_gain(gain)?;
    let m = sys.closed_loop(gain);
    let sim = similarity_transform(&m, h)?;
    let needed = spectral_norm(gain)
        .max(spectral_norm(&sim.p))
        .max(spectral_norm(&sim.p_inv));
    let mut kappa = 1.0;
    let mut steps = 0;
    while kappa * (1.0 + CERT_TOL) < needed {
        kappa *= KAPPA_GRID_RATIO;
        steps += 1;
        if steps > KAPPA_GRID_MAX_STEPS {
            return Err(Error::NotStronglyStable {
                h,
                reason: format!("kappa grid exhausted (needs {needed:.3e})"),
            });
        }
    }
    let gamma_max = max_contraction_rate(sys, gain, h)?;
    if !(gamma_max > 0.0) {
        return Err(Error::NotStronglyStable {
            h,
            reason: format!("no contraction: measured rate {gamma_max:.6}"),
        });
    }
    for j in (1..=GAMMA_GRID_POINTS).rev() {
        let gamma = gamma_max * j as f64 / GAMMA_GRID_POINTS as f64;
        if certify(sys, gain, h, kappa, gamma)?.is_accepted() {
            return Ok((kappa, gamma));
        }
    }
    Err(Error::NotStronglyStable {
        h,
        reason: "empty acceptance region on the (kappa, gamma) grid".into(),
    })
}

#[derive(Clone, Debug)]
pub struct LqrSolution {
    pub gain: DMatrix<f64>,
    pub riccati: DMatrix<f64>,
    pub iterations: usize,
    pub residual: f64,
}

const NEWTON_MAX_ITER: usize = 200;

/// Continuous-time LQR gain `K = R^{-1} B' X` with `X` from Newton-Kleinman.
pub fn lqr_gain(sys: &SystemDynamics, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    lqr(sys, q, r).map(|s| s.gain)
}

pub fn lqr(sys: &SystemDynamics, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<LqrSolution> {
    let (n, nu) = (sys.state_dim(), sys.input_dim());
    if q.shape() != (n, n) || r.shape() != (nu, nu) {
        return Err(Error::dim("Q must be d_x x d_x and R must be d_u x d_u"));
    }
    let r_chol = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Synthesis("R must be positive definite".into()))?;
    let r_inv = r_chol.inverse();
    let (a, b) = (sys.a(), sys.b());
    let s = b * &r_inv * b.transpose();

    let mut k = initial_stabilizing_gain(sys)?;
    let mut x_prev: Option<DMatrix<f64>> = None;
    for it in 1..=NEWTON_MAX_ITER {
        let acl = a - b * &k;
        let c = q + k.transpose() * r * &k;
        let x = solve_continuous_lyapunov(&acl, &c)?;
        if !x.iter().all(|v| v.is_finite()) {
            break;
        }
        k = &r_inv * b.transpose() * &x;
        let converged = x_prev
            .as_ref()
            .is_some_and(|xp| (xp - &x).amax() <= 1e-14 * (1.0 + x.amax()));
        let residual = (a.transpose() * &x + &x * a - &x * &s * &x + q).amax();
        if converged || residual <= 1e-13 * (1.0 + x.amax()) {
            let k = &r_inv * b.transpose() * &x;
            if residual > 1e-8 {
                return Err(Error::Synthesis(format!("Riccati residual {residual:.3e} above 1e-8")));
            }
            return Ok(LqrSolution {
                gain: k,
                riccati: x,
                iterations: it,
                residual,
            });
        }
        x_prev = Some(x);
    }
    Err(Error::Synthesis(format!(
        "Newton-Kleinman did not converge in {NEWTON_MAX_ITER} iterations (pair may not be stabilizable)"
    )))
}

/// Zero when `A` is already Hurwitz, otherwise the pole-shift gain
/// `K0 = B' Z^{-1}` with `(A + bI) Z + Z (A + bI)' = 2 B B'`, `b > ||A||`,
/// which places the closed-loop spectrum left of `-b`.
fn initial_stabilizing_gain(sys: &SystemDynamics) -> Result<DMatrix<f64>> {
    let (n, nu) = (sys.state_dim(), sys.input_dim());
    if spectral_abscissa(sys.a()) < 0.0 {
        return Ok(DMatrix::zeros(nu, n));
    }
    let shift = spectral_norm(sys.a()) + 1.0;
    let shifted = sys.a() + DMatrix::identity(n, n) * shift;
    // solve_continuous_lyapunov solves op' X + X op + c = 0; use op = shifted'
    let bbt = sys.b() * sys.b().transpose();
    let z = solve_continuous_lyapunov(&shifted.transpose(), &(bbt * -2.0))?;
    let z_inv = z
        .try_inverse()
        .ok_or_else(|| Error::Synthesis("pole-shift Gramian singular: (A, B) not controllable".into()))?;
    let k0 = sys.b().transpose() * z_inv;
    if spectral_abscissa(&sys.closed_loop(&k0)) >= 0.0 {
        return Err(Error::Synthesis("pole-shift initialization failed to stabilize".into()));
    }
    Ok(k0)
}

/// `||(I + h(A-BK))^i||` for `i = 0..=count`, used by the contraction property checks.
pub fn sampled_power_norms(sys: &SystemDynamics, gain: &DMatrix<f64>, h: f64, count: usize) -> Vec<f64> {
    matrix_powers(&sys.sampled_closed_loop(gain, h), count)
        .iter()
        .map(spectral_norm)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64, b: f64) -> SystemDynamics {
        SystemDynamics::new(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, b)).unwrap()
    }

    #[test]
    fn scalar_integrator_accepted() {
        let sys = scalar(0.0, 1.0);
        let k = DMatrix::from_element(1, 1, 0.5);
        let cert = certify(&sys, &k, 0.1, 1.0, 0.5).unwrap().accepted().expect("accepted");
        assert!((cert.p[(0, 0)].abs() - 1.0).abs() < 1e-12);
        assert!((cert.verified[0].1 - 0.95).abs() < 1e-12);
    }

    #[test]
    fn unstable_scalar_refused_with_measured_norm() {
        let sys = scalar(1.0, 1.0);
        let k = DMatrix::from_element(1, 1, 0.5);
        match certify(&sys, &k, 0.1, 1.0, 1e-6).unwrap() {
            Certification::Refused(r) => {
                assert_eq!(r.condition, Condition::Contraction { h: 0.1 });
                assert!((r.measured - 1.05).abs() < 1e-12);
            }
            Certification::Accepted(_) => panic!("should refuse"),
        }
    }

    #[test]
    fn best_certificate_scalar_and_diagonal() {
        let sys = scalar(0.0, 1.0);
        let (kappa, gamma) = best_certificate(&sys, &DMatrix::from_element(1, 1, 0.5), 0.1).unwrap();
        assert_eq!(kappa, 1.0);
        assert!((gamma - 0.5).abs() < 1e-9);

        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        let sys = SystemDynamics::new(a, DMatrix::identity(2, 2)).unwrap();
        let (kappa, gamma) = best_certificate(&sys, &DMatrix::zeros(2, 2), 0.1).unwrap();
        assert_eq!(kappa, 1.0);
        assert!((gamma - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rotation_block_is_normal_after_standardization() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.2, -0.2]);
        let sys = SystemDynamics::new(a, DMatrix::identity(2, 2)).unwrap();
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.8]);
        let m = sys.closed_loop(&k);
        let sim = similarity_transform(&m, 0.1).unwrap();
        assert_eq!(sim.construction, Construction::Eigenbasis);
        let l = sim.transformed(&m, 0.1);
        // a scaled rotation has equal singular values
        let sv = l.svd(false, false).singular_values;
        assert!((sv[0] - sv[1]).abs() < 1e-10);
    }

    #[test]
    fn jordan_block_uses_schur_fallback() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0]);
        let sys = SystemDynamics::new(a, DMatrix::identity(2, 2)).unwrap();
        let m = sys.closed_loop(&DMatrix::zeros(2, 2));
        let sim = similarity_transform(&m, 0.1).unwrap();
        assert_eq!(sim.construction, Construction::ScaledSchur);
        assert!(spectral_norm(&sim.transformed(&m, 0.1)) < 1.0);
    }

    #[test]
    fn lqr_scalar_cases() {
        let k = lqr_gain(&scalar(0.0, 1.0), &DMatrix::identity(1, 1), &DMatrix::identity(1, 1)).unwrap();
        assert!((k[(0, 0)] - 1.0).abs() < 1e-10);
        // X^2 - 2X - 1 = 0
        let k = lqr_gain(&scalar(1.0, 1.0), &DMatrix::identity(1, 1), &DMatrix::identity(1, 1)).unwrap();
        assert!((k[(0, 0)] - (1.0 + 2f64.sqrt())).abs() < 1e-10);
    }

    #[test]
    fn lqr_decoupled_diagonal() {
        let sys = SystemDynamics::new(-DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let k = lqr_gain(&sys, &DMatrix::identity(2, 2), &DMatrix::identity(2, 2)).unwrap();
        let expected = DMatrix::identity(2, 2) * (2f64.sqrt() - 1.0);
        assert!((k - expected).amax() < 1e-10);
    }

    #[test]
    fn uncontrollable_unstable_pair_fails() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let sys = SystemDynamics::new(a, b).unwrap();
        assert!(matches!(
            lqr_gain(&sys, &DMatrix::identity(2, 2), &DMatrix::identity(1, 1)),
            Err(Error::Synthesis(_))
        ));
    }
}
