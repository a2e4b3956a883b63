//! Disturbance-action control: disturbance estimates from sampled states,
//! the decaying spectral-ball parameter class and its projection, and the
//! action `u = -K x + sum_i M^i w_hat_{r-i}`.
//!
//! Blocks carry the sample interval: the class is
//! `||M^i|| <= a * h * decay^(i-1)` and the action has no extra `h` factor.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{all_finite_vec, digest_f64, spectral_norm};
use crate::linsys::SystemDynamics;

/// Relative slack under which a block counts as inside its ball. Projection
/// leaves such blocks untouched, which makes it idempotent bit for bit.
pub const CLASS_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DecayBase {
    /// `1 - h gamma`
    #[default]
    OneMinusHGamma,
    /// `1 - gamma`
    OneMinusGamma,
}

impl DecayBase {
    pub fn factor(self, h: f64, gamma: f64) -> f64 {
        match self {
            DecayBase::OneMinusHGamma => 1.0 - h * gamma,
            DecayBase::OneMinusGamma => 1.0 - gamma,
        }
    }
}

/// Shape and radii of the parameter class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassSpec {
    pub radius_a: f64,
    pub h: f64,
    pub decay: f64,
    pub l: usize,
    pub d_u: usize,
    pub d_x: usize,
}

impl ClassSpec {
    pub fn new(radius_a: f64, h: f64, decay: f64, l: usize, d_u: usize, d_x: usize) -> Result<Self> {
        if !(radius_a >= 0.0) || !radius_a.is_finite() {
            return Err(Error::invalid(format!("class radius must be finite and >= 0, got {radius_a}")));
        }
        if !(h > 0.0) {
            return Err(Error::invalid(format!("h must be positive, got {h}")));
        }
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::invalid(format!("decay factor must lie in [0, 1], got {decay}")));
        }
        if l == 0 || d_u == 0 || d_x == 0 {
            return Err(Error::dim("class needs l, d_u, d_x >= 1"));
        }
        Ok(Self {
            radius_a,
            h,
            decay,
            l,
            d_u,
            d_x,
        })
    }

    /// Class for certified `(kappa, gamma)` with the default radius `2 kappa^3`
    /// unless `radius_a` is given.
    #[allow(clippy::too_many_arguments)]
    pub fn for_certificate(
        kappa: f64,
        gamma: f64,
        h: f64,
        l: usize,
        base: DecayBase,
        radius_a: Option<f64>,
        d_u: usize,
        d_x: usize,
    ) -> Result<Self> {
        let a = radius_a.unwrap_or(2.0 * kappa.powi(3));
        let decay = base.factor(h, gamma).max(0.0);
        Self::new(a, h, decay, l, d_u, d_x)
    }

    /// `b_i = a h decay^(i-1)` for the 1-based block index `i`.
    pub fn bound(&self, i: usize) -> f64 {
        debug_assert!(i >= 1);
        self.radius_a * self.h * self.decay.powi(i as i32 - 1)
    }

    pub fn bounds(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.l);
        let mut b = self.radius_a * self.h;
        for _ in 0..self.l {
            out.push(b);
            b *= self.decay;
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.l * self.d_u * self.d_x
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DacParams {
    blocks: Vec<DMatrix<f64>>,
    class: ClassSpec,
}

impl DacParams {
    pub fn zeros(class: &ClassSpec) -> Self {
        Self {
            blocks: vec![DMatrix::zeros(class.d_u, class.d_x); class.l],
            class: class.clone(),
        }
    }

    /// Wraps blocks that must already satisfy the class constraint.
    pub fn new(blocks: Vec<DMatrix<f64>>, class: &ClassSpec) -> Result<Self> {
        check_blocks(&blocks, class)?;
        let bounds = class.bounds();
        for (i, (m, b)) in blocks.iter().zip(&bounds).enumerate() {
            let norm = spectral_norm(m);
            if !in_ball(norm, *b) {
                return Err(Error::invalid(format!(
                    "block {} has norm {norm:.6e} above class bound {b:.6e}",
                    i + 1
                )));
            }
        }
        Ok(Self {
            blocks,
            class: class.clone(),
        })
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    /// Block `M^i` for the 1-based index `i`.
    pub fn block(&self, i: usize) -> &DMatrix<f64> {
        &self.blocks[i - 1]
    }

    pub fn class(&self) -> &ClassSpec {
        &self.class
    }

    pub fn l(&self) -> usize {
        self.class.l
    }

    pub fn radius_a(&self) -> f64 {
        self.class.radius_a
    }

    pub fn decay(&self) -> f64 {
        self.class.decay
    }

    /// Largest `||M^i|| / b_i` over the blocks (0 for zero radius and zero blocks).
    pub fn max_class_ratio(&self) -> f64 {
        self.blocks
            .iter()
            .zip(self.class.bounds())
            .map(|(m, b)| {
                let n = spectral_norm(m);
                if b > 0.0 {
                    n / b
                } else if n > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn is_feasible(&self) -> bool {
        self.blocks
            .iter()
            .zip(self.class.bounds())
            .all(|(m, b)| in_ball(spectral_norm(m), b))
    }

    /// Flat layout `[l, d_u, d_x, M^1 row-major, M^2 row-major, ...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 + self.class.param_count());
        out.push(self.class.l as f64);
        out.push(self.class.d_u as f64);
        out.push(self.class.d_x as f64);
        for m in &self.blocks {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    out.push(m[(i, j)]);
                }
            }
        }
        out
    }

    /// Inverse of [`DacParams::to_flat`]; header must match the class and
    /// blocks must be in class.
    pub fn from_flat(data: &[f64], class: &ClassSpec) -> Result<Self> {
        if data.len() < 3 {
            return Err(Error::dim("flat parameter array shorter than its header"));
        }
        let header = [class.l as f64, class.d_u as f64, class.d_x as f64];
        if data[..3] != header {
            return Err(Error::dim(format!(
                "flat header {:?} does not match class (l, d_u, d_x) = {:?}",
                &data[..3],
                header
            )));
        }
        let body = &data[3..];
        if body.len() != class.param_count() {
            return Err(Error::dim(format!(
                "flat body has {} values, expected {}",
                body.len(),
                class.param_count()
            )));
        }
        let size = class.d_u * class.d_x;
        let blocks = body
            .chunks(size)
            .map(|c| DMatrix::from_row_slice(class.d_u, class.d_x, c))
            .collect();
        Self::new(blocks, class)
    }

    /// Little-endian f64 encoding of the flat layout.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        self.to_flat().iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_checkpoint_bytes(bytes: &[u8], class: &ClassSpec) -> Result<Self> {
        if !bytes.len().is_multiple_of(8) {
            return Err(Error::dim("checkpoint length is not a multiple of 8 bytes"));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Self::from_flat(&data, class)
    }

    /// Short digest of the flat layout.
    pub fn param_hash(&self) -> String {
        digest_f64(self.to_flat())
    }
}

fn in_ball(norm: f64, bound: f64) -> bool {
    norm <= bound * (1.0 + CLASS_TOL)
}

fn check_blocks(blocks: &[DMatrix<f64>], class: &ClassSpec) -> Result<()> {
    if blocks.len() != class.l {
        return Err(Error::dim(format!("expected {} blocks, got {}", class.l, blocks.len())));
    }
    if let Some(m) = blocks.iter().find(|m| m.shape() != (class.d_u, class.d_x)) {
        return Err(Error::dim(format!(
            "blocks must be {}x{}, got {:?}",
            class.d_u,
            class.d_x,
            m.shape()
        )));
    }
    Ok(())
}

/// Nearest point (Frobenius) of the spectral ball of radius `bound`:
/// singular values above `bound` are clipped to it.
pub fn project_block(m: &DMatrix<f64>, bound: f64) -> DMatrix<f64> {
    let norm = spectral_norm(m);
    if in_ball(norm, bound) {
        return m.clone();
    }
    if bound <= 0.0 {
        return DMatrix::zeros(m.nrows(), m.ncols());
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let clipped = DMatrix::from_diagonal(&svd.singular_values.map(|s| s.min(bound)));
    let out = u * clipped * v_t;
    let out_norm = spectral_norm(&out);
    // guard against rounding pushing the reconstruction just outside
    if in_ball(out_norm, bound) {
        out
    } else {
        out * (bound / out_norm)
    }
}

/// Per-block projection onto the class.
pub fn project(raw: &[DMatrix<f64>], class: &ClassSpec) -> Result<DacParams> {
    check_blocks(raw, class)?;
    let blocks = raw
        .iter()
        .zip(class.bounds())
        .map(|(m, b)| project_block(m, b))
        .collect();
    Ok(DacParams {
        blocks,
        class: class.clone(),
    })
}

/// `w_hat_r = (x_next - x_r - h (A x_r + B u_r)) / h`.
pub fn estimate_disturbance(
    sys: &SystemDynamics,
    x_r: &DVector<f64>,
    u_r: &DVector<f64>,
    x_next: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!("h must be positive, got {h}")));
    }
    let n = sys.state_dim();
    if x_r.len() != n || x_next.len() != n || u_r.len() != sys.input_dim() {
        return Err(Error::dim("state or action dimension does not match the system"));
    }
    let drift = sys.a() * x_r + sys.b() * u_r;
    Ok((x_next - x_r - drift * h) / h)
}

/// The most recent disturbance estimates, newest first, with the running
/// maximum norm `W0`.
#[derive(Clone, Debug)]
pub struct NoiseBuffer {
    entries: VecDeque<DVector<f64>>,
    capacity: usize,
    dim: usize,
    w0: f64,
    zero: DVector<f64>,
}

impl NoiseBuffer {
    /// Buffer holding `2 l` entries.
    pub fn for_window(dim: usize, l: usize) -> Self {
        Self::with_capacity(dim, 2 * l)
    }

    pub fn with_capacity(dim: usize, capacity: usize) -> Self {
        Self {
            entries: VecDeque::with_capacity(capacity),
            capacity,
            dim,
            w0: 0.0,
            zero: DVector::zeros(dim),
        }
    }

    pub fn push(&mut self, w_hat: DVector<f64>) -> Result<()> {
        if w_hat.len() != self.dim {
            return Err(Error::dim("disturbance estimate has the wrong dimension"));
        }
        if !all_finite_vec(&w_hat) {
            return Err(Error::invalid("non-finite disturbance estimate"));
        }
        self.w0 = self.w0.max(w_hat.norm());
        if self.capacity == 0 {
            return Ok(());
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_back();
        }
        self.entries.push_front(w_hat);
        Ok(())
    }

    /// `w_hat_{r-lag}` for `lag >= 1`, where `r` is the next sample; zero
    /// when unavailable.
    pub fn lag(&self, lag: usize) -> &DVector<f64> {
        debug_assert!(lag >= 1);
        self.entries.get(lag - 1).unwrap_or(&self.zero)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn w0(&self) -> f64 {
        self.w0
    }
}

/// `u = -K x_r + sum_{i=1}^{l} M^i w_hat_{r-i}`.
pub fn dac_action(
    gain: &DMatrix<f64>,
    x_r: &DVector<f64>,
    params: &DacParams,
    buf: &NoiseBuffer,
) -> Result<DVector<f64>> {
    let c = params.class();
    if gain.shape() != (c.d_u, c.d_x) || x_r.len() != c.d_x || buf.dim() != c.d_x {
        return Err(Error::dim("gain, state or buffer does not match the parameter class"));
    }
    let mut u = -(gain * x_r);
    for (i, m) in params.blocks().iter().enumerate() {
        let w = buf.lag(i + 1);
        if w.iter().any(|v| *v != 0.0) {
            u.gemv(1.0, m, w, 1.0);
        }
    }
    Ok(u)
}
