//! Convex quadratic stage costs with analytic gradients and declared
//! Lipschitz-type constants `(beta, G, L)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{is_symmetric, min_symmetric_eigenvalue, spectral_norm};

/// Sinusoidal state reference `amplitude * sin(frequency * t + phase) * direction`.
#[derive(Clone, Debug, PartialEq)]
pub struct Reference {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub direction: DVector<f64>,
}

impl Reference {
    pub fn at(&self, t: f64) -> DVector<f64> {
        &self.direction * (self.amplitude * (self.frequency * t + self.phase).sin())
    }

    fn sup(&self) -> f64 {
        self.amplitude.abs() * self.direction.norm()
    }

    fn sup_rate(&self) -> f64 {
        self.sup() * self.frequency.abs()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CostKind {
    /// `x'Qx + u'Ru + offset`
    Quadratic {
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        offset: f64,
    },
    /// `(x - ref(t))'Q(x - ref(t)) + u'Ru`
    TrackingQuadratic {
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        reference: Reference,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostFn {
    kind: CostKind,
    beta: f64,
    g: f64,
    l: f64,
    analytic_gradients: bool,
}

impl CostFn {
    pub fn quadratic(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        Self::quadratic_with_offset(q, r, 0.0)
    }

    pub fn quadratic_with_offset(q: DMatrix<f64>, r: DMatrix<f64>, offset: f64) -> Result<Self> {
        check_weights(&q, &r)?;
        let w = spectral_norm(&q).max(spectral_norm(&r));
        let cost = Self {
            kind: CostKind::Quadratic { q, r, offset },
            beta: w + offset.abs(),
            g: 2.0 * w,
            l: 0.0,
            analytic_gradients: true,
        };
        cost.check_gradients()?;
        Ok(cost)
    }

    /// Declared constants are valid on `||x||, ||u|| <= D` for `D >= 1`.
    pub fn tracking(q: DMatrix<f64>, r: DMatrix<f64>, reference: Reference) -> Result<Self> {
        check_weights(&q, &r)?;
        if reference.direction.len() != q.nrows() {
            return Err(Error::dim("reference direction must have the state dimension"));
        }
        let nq = spectral_norm(&q);
        let w = nq.max(spectral_norm(&r));
        let rs = reference.sup();
        let cost = Self {
            beta: w * (1.0 + rs) * (1.0 + rs),
            g: 2.0 * w * (1.0 + rs),
            l: 2.0 * nq * (1.0 + rs) * reference.sup_rate(),
            kind: CostKind::TrackingQuadratic { q, r, reference },
            analytic_gradients: true,
        };
        cost.check_gradients()?;
        Ok(cost)
    }

    /// Overrides the declared `(beta, G, L)`.
    pub fn with_constants(mut self, beta: Option<f64>, g: Option<f64>, l: Option<f64>) -> Self {
        if let Some(b) = beta {
            self.beta = b;
        }
        if let Some(g) = g {
            self.g = g;
        }
        if let Some(l) = l {
            self.l = l;
        }
        self
    }

    /// Hides the analytic gradients so callers fall back to finite differences.
    pub fn without_gradients(mut self) -> Self {
        self.analytic_gradients = false;
        self
    }

    pub fn kind(&self) -> &CostKind {
        &self.kind
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn has_gradients(&self) -> bool {
        self.analytic_gradients
    }

    pub fn state_weight(&self) -> &DMatrix<f64> {
        match &self.kind {
            CostKind::Quadratic { q, .. } | CostKind::TrackingQuadratic { q, .. } => q,
        }
    }

    pub fn input_weight(&self) -> &DMatrix<f64> {
        match &self.kind {
            CostKind::Quadratic { r, .. } | CostKind::TrackingQuadratic { r, .. } => r,
        }
    }

    /// State offset `ref(t)` so that the cost reads `(x - ref)'Q(x - ref) + u'Ru + offset`.
    pub fn reference_at(&self, t: f64) -> Option<DVector<f64>> {
        match &self.kind {
            CostKind::Quadratic { .. } => None,
            CostKind::TrackingQuadratic { reference, .. } => Some(reference.at(t)),
        }
    }

    pub fn offset(&self) -> f64 {
        match &self.kind {
            CostKind::Quadratic { offset, .. } => *offset,
            CostKind::TrackingQuadratic { .. } => 0.0,
        }
    }

    pub fn is_time_invariant(&self) -> bool {
        matches!(self.kind, CostKind::Quadratic { .. })
    }

    pub fn eval(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let (q, r) = (self.state_weight(), self.input_weight());
        let ux = u.dot(&(r * u));
        match self.reference_at(t) {
            None => x.dot(&(q * x)) + ux + self.offset(),
            Some(rf) => {
                let e = x - rf;
                e.dot(&(q * &e)) + ux
            }
        }
    }

    /// `(grad_x c, grad_u c)`, or `None` when gradients are hidden.
    pub fn grad(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        if !self.analytic_gradients {
            return None;
        }
        Some(self.grad_unchecked(t, x, u))
    }

    fn grad_unchecked(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let (q, r) = (self.state_weight(), self.input_weight());
        let gx = match self.reference_at(t) {
            None => q * x * 2.0,
            Some(rf) => q * (x - rf) * 2.0,
        };
        (gx, r * u * 2.0)
    }

    fn check_gradients(&self) -> Result<()> {
        let (nx, nu) = (self.state_weight().nrows(), self.input_weight().nrows());
        let mut rng = ChaCha8Rng::seed_from_u64(0x00c0_57f0);
        let step = 1e-6;
        for _ in 0..10 {
            let t = rng.random_range(0.0..10.0);
            let x = DVector::from_fn(nx, |_, _| rng.random_range(-1.0..1.0));
            let u = DVector::from_fn(nu, |_, _| rng.random_range(-1.0..1.0));
            let (gx, gu) = self.grad_unchecked(t, &x, &u);
            for i in 0..nx {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += step;
                xm[i] -= step;
                let fd = (self.eval(t, &xp, &u) - self.eval(t, &xm, &u)) / (2.0 * step);
                if (fd - gx[i]).abs() > 1e-6 * (1.0 + gx[i].abs()) {
                    return Err(Error::invalid(format!("state gradient inconsistent: fd {fd} vs {}", gx[i])));
                }
            }
            for i in 0..nu {
                let mut up = u.clone();
                let mut um = u.clone();
                up[i] += step;
                um[i] -= step;
                let fd = (self.eval(t, &x, &up) - self.eval(t, &x, &um)) / (2.0 * step);
                if (fd - gu[i]).abs() > 1e-6 * (1.0 + gu[i].abs()) {
                    return Err(Error::invalid(format!("input gradient inconsistent: fd {fd} vs {}", gu[i])));
                }
            }
        }
        Ok(())
    }
}

fn check_weights(q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<()> {
    for (name, m) in [("Q", q), ("R", r)] {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::dim(format!("{name} must be square and non-empty")));
        }
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!("{name} must be finite")));
        }
        if !is_symmetric(m, 1e-12) {
            return Err(Error::invalid(format!("{name} must be symmetric")));
        }
        let min_eig = min_symmetric_eigenvalue(m);
        if min_eig < -1e-12 * (1.0 + m.amax()) {
            return Err(Error::invalid(format!("{name} must be positive semidefinite (min eigenvalue {min_eig})")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_indefinite_weight() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(CostFn::quadratic(q, DMatrix::identity(1, 1)).is_err());
    }

    #[test]
    fn declared_gradient_constant_for_identity_weights() {
        let c = CostFn::quadratic(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        assert_eq!(c.g(), 2.0);
        assert_eq!(c.l(), 0.0);
        let x = DVector::from_vec(vec![1.0, 2.0]);
        let u = DVector::from_vec(vec![-1.0, 0.5]);
        assert!((c.eval(0.0, &x, &u) - 6.25).abs() < 1e-15);
    }

    #[test]
    fn tracking_time_lipschitz_holds_on_grid() {
        let reference = Reference {
            amplitude: 0.7,
            frequency: 1.3,
            phase: 0.2,
            direction: DVector::from_vec(vec![1.0, 0.0]),
        };
        let c = CostFn::tracking(DMatrix::identity(2, 2), DMatrix::identity(1, 1), reference).unwrap();
        let d = 1.0;
        let x = DVector::from_vec(vec![0.6, -0.8]);
        let u = DVector::from_vec(vec![0.0]);
        for i in 0..200 {
            let t1 = i as f64 * 0.05;
            let t2 = t1 + 0.01;
            let diff = (c.eval(t1, &x, &u) - c.eval(t2, &x, &u)).abs();
            assert!(diff <= c.l() * (t2 - t1) * d * d + 1e-15);
        }
    }
}
