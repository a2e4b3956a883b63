//! Ideal state/action under a window of DAC parameters, the memory loss
//! `g_k(M) = f_k(M, ..., M)` with its gradient, and the projected OGD step.
//!
//! Samples are indexed from 0. With `Q = I + h(A - BK)` and
//! `e_s = w_hat_s + B z_s`, `z_s = sum_i M_s^i w_hat_{s-i}`, the sampled
//! closed loop satisfies `x_{s+1} = Q x_s + h e_s`. The ideal state at `t`
//! restarts that recursion from zero at sample `t - 1 - l`:
//! `y_t = h sum_{j=0}^{l} Q^j e_{t-1-j}` and `v_t = -K y_t + z_t`.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::bench::cost::CostFn;
use crate::dac::{project, ClassSpec, DacParams};
use crate::error::{Error, Result};
use crate::linalg::{all_finite_mat, matrix_powers, spectral_norm};
use crate::linsys::SystemDynamics;

/// Central-difference step for the gradient fallback.
pub const FD_STEP: f64 = 1e-6;

/// Uniform sample grid over `[0, T]` whose last interval may be shorter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleGrid {
    pub h: f64,
    pub n: usize,
    /// Length of the last interval divided by `h`, in `(0, 1]`.
    pub final_weight: f64,
}

impl SampleGrid {
    /// `n = ceil(T / h)` with a relative slack of `1e-9` against rounding.
    pub fn new(horizon: f64, h: f64) -> Result<Self> {
        if !(horizon > 0.0) || !(h > 0.0) || !horizon.is_finite() {
            return Err(Error::invalid(format!("need T > 0 and h > 0, got T = {horizon}, h = {h}")));
        }
        let ratio = horizon / h;
        let n = ((ratio - 1e-9 * ratio.max(1.0)).ceil() as usize).max(1);
        let last = horizon - (n - 1) as f64 * h;
        let final_weight = (last / h).clamp(f64::MIN_POSITIVE, 1.0);
        Ok(Self { h, n, final_weight })
    }

    /// Grid of `n` full intervals.
    pub fn full(h: f64, n: usize) -> Self {
        Self { h, n, final_weight: 1.0 }
    }

    /// `h_t / h`.
    pub fn weight(&self, t: usize) -> f64 {
        if t + 1 == self.n {
            self.final_weight
        } else {
            1.0
        }
    }

    pub fn interval(&self, t: usize) -> f64 {
        self.h * self.weight(t)
    }

    pub fn time(&self, t: usize) -> f64 {
        t as f64 * self.h
    }

    pub fn horizon(&self) -> f64 {
        (self.n - 1) as f64 * self.h + self.interval(self.n - 1)
    }

    /// Number of slow blocks `p = ceil(n / m)`.
    pub fn slow_blocks(&self, m: usize) -> usize {
        self.n.div_ceil(m)
    }

    /// Sample range `[km, min((k+1)m, n))` of slow block `k`.
    pub fn block_range(&self, k: usize, m: usize) -> std::ops::Range<usize> {
        (k * m).min(self.n)..((k + 1) * m).min(self.n)
    }
}

/// `Psi_i` for `i = 0..=i_max`, coefficients of `w_hat_{t-i}` in `y_{t+1} / h`.
#[derive(Clone, Debug)]
pub struct PsiCoefficients {
    pub q_h: DMatrix<f64>,
    pub psi: Vec<DMatrix<f64>>,
}

/// `Psi_i = Q^i 1{i <= l} + sum_{j=0}^{l} Q^j B M_{t-j}^{i-j} 1{1 <= i-j <= l}`.
///
/// `window[j]` holds the parameters in force at sample `t - j`, `j = 0..=l`.
pub fn psi_table(
    sys: &SystemDynamics,
    gain: &DMatrix<f64>,
    h: f64,
    window: &[&DacParams],
    i_max: usize,
) -> Result<PsiCoefficients> {
    sys.check_gain(gain)?;
    let l = window.first().map(|p| p.l()).ok_or_else(|| Error::dim("empty parameter window"))?;
    if window.len() != l + 1 || window.iter().any(|p| p.l() != l) {
        return Err(Error::dim(format!("window must hold l + 1 = {} parameter sets of length l", l + 1)));
    }
    let q_h = sys.sampled_closed_loop(gain, h);
    let qp = matrix_powers(&q_h, i_max.min(l).max(1));
    let qb: Vec<DMatrix<f64>> = qp.iter().map(|q| q * sys.b()).collect();
    let n = sys.state_dim();
    let mut psi = Vec::with_capacity(i_max + 1);
    for i in 0..=i_max {
        let mut p = if i <= l { qp[i].clone() } else { DMatrix::zeros(n, n) };
        let j_lo = i.saturating_sub(l);
        let j_hi = (i - i.min(1)).min(l);
        if i >= 1 {
            for j in j_lo..=j_hi {
                p += &qb[j] * window[j].block(i - j);
            }
        }
        psi.push(p);
    }
    Ok(PsiCoefficients { q_h, psi })
}

/// Everything needed to evaluate ideal states for slow block `k`: the
/// parameters `M_{k-H}, ..., M_k` (oldest first; callers repeat `M_0` for
/// negative indices) and the disturbance history.
#[derive(Clone, Debug)]
pub struct IdealWindow<'a> {
    pub sys: &'a SystemDynamics,
    pub gain: &'a DMatrix<f64>,
    pub h: f64,
    pub m: usize,
    pub k: usize,
    pub params: Vec<&'a DacParams>,
    /// `w_hat_0, w_hat_1, ...`; indices outside the slice read as zero.
    pub w_hat: &'a [DVector<f64>],
}

impl<'a> IdealWindow<'a> {
    pub fn new(
        sys: &'a SystemDynamics,
        gain: &'a DMatrix<f64>,
        h: f64,
        m: usize,
        k: usize,
        params: Vec<&'a DacParams>,
        w_hat: &'a [DVector<f64>],
    ) -> Result<Self> {
        let l = params.first().map(|p| p.l()).ok_or_else(|| Error::dim("empty parameter window"))?;
        if m == 0 || l % m != 0 || params.len() != l / m + 1 {
            return Err(Error::dim(format!(
                "window needs H + 1 = l/m + 1 parameter sets with m | l (l = {l}, m = {m}, got {})",
                params.len()
            )));
        }
        Ok(Self {
            sys,
            gain,
            h,
            m,
            k,
            params,
            w_hat,
        })
    }

    pub fn memory(&self) -> usize {
        self.params.len() - 1
    }

    pub fn l(&self) -> usize {
        self.params[0].l()
    }

    /// Parameters in force at sample `s`, clamped into the window.
    pub fn params_at(&self, s: usize) -> &'a DacParams {
        let hh = self.memory() as i64;
        let idx = (s / self.m) as i64 - (self.k as i64 - hh);
        self.params[idx.clamp(0, hh) as usize]
    }

    fn w(&self, s: i64) -> Option<&DVector<f64>> {
        if s < 0 {
            None
        } else {
            self.w_hat.get(s as usize)
        }
    }

    /// `z_s = sum_i M_s^i w_hat_{s-i}` with the parameters in force at `s`.
    fn z(&self, s: usize, params: &DacParams) -> DVector<f64> {
        let mut z = DVector::zeros(self.sys.input_dim());
        for (i, mi) in params.blocks().iter().enumerate() {
            if let Some(w) = self.w(s as i64 - i as i64 - 1) {
                z.gemv(1.0, mi, w, 1.0);
            }
        }
        z
    }
}

/// `(y_t, v_t)` through the Psi sum truncated at `2l`.
pub fn ideal_state_action(win: &IdealWindow<'_>, t: usize) -> Result<(DVector<f64>, DVector<f64>)> {
    let l = win.l();
    let n = win.sys.state_dim();
    let mut y = DVector::zeros(n);
    if t >= 1 {
        let window: Vec<&DacParams> = (0..=l)
            .map(|j| win.params_at((t - 1).saturating_sub(j)))
            .collect();
        let psi = psi_table(win.sys, win.gain, win.h, &window, 2 * l)?;
        for (i, p) in psi.psi.iter().enumerate() {
            if let Some(w) = win.w(t as i64 - 1 - i as i64) {
                y.gemv(win.h, p, w, 1.0);
            }
        }
    }
    let v = -(win.gain * &y) + win.z(t, win.params_at(t));
    Ok((y, v))
}

/// `f_k = sum_{t in block k} w_t c_t(y_t, v_t)` through [`ideal_state_action`].
pub fn ideal_cost(win: &IdealWindow<'_>, cost: &CostFn, grid: &SampleGrid) -> Result<f64> {
    let mut total = 0.0;
    for t in grid.block_range(win.k, win.m) {
        let (y, v) = ideal_state_action(win, t)?;
        total += grid.weight(t) * cost.eval(grid.time(t), &y, &v);
    }
    Ok(total)
}

/// Gradient in block layout.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockGradient {
    pub blocks: Vec<DMatrix<f64>>,
    /// Set when the cost had no analytic gradient and central differences were used.
    pub finite_difference: bool,
}

impl BlockGradient {
    pub fn norm(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(all_finite_mat)
    }
}

/// `Pi(M - eta * grad)`.
pub fn ogdm_step(params: &DacParams, grad: &BlockGradient, eta: f64) -> Result<DacParams> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::invalid(format!("step size must be finite and >= 0, got {eta}")));
    }
    if grad.blocks.len() != params.l() {
        return Err(Error::dim("gradient and parameters have different block counts"));
    }
    if eta == 0.0 {
        return Ok(params.clone());
    }
    let raw: Vec<DMatrix<f64>> = params
        .blocks()
        .iter()
        .zip(&grad.blocks)
        .map(|(m, g)| m - g * eta)
        .collect();
    project(&raw, params.class())
}

/// Fast evaluator of ideal costs over sample ranges, used by the controller
/// and the regret diagnostics. Runs the `e_s` recursion once per range and
/// truncates it with `Q^{l+1}`, so a block costs `O((m + l) l)` products.
pub struct MemoryLoss<'a> {
    sys: &'a SystemDynamics,
    gain: &'a DMatrix<f64>,
    cost: &'a CostFn,
    grid: SampleGrid,
    m: usize,
    l: usize,
    w_hat: &'a [DVector<f64>],
    q_h: DMatrix<f64>,
    q_tail: DMatrix<f64>,
}

/// Value of an ideal-cost evaluation with the per-sample ideal trajectory.
#[derive(Clone, Debug)]
pub struct IdealTrace {
    pub value: f64,
    pub y: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
}

/// Disturbance estimates for samples `[lo, hi)` stored newest first, so
/// that `[w_{s-1}; ...; w_{s-l}]` is one contiguous slice.
struct ReversedHistory {
    data: Vec<f64>,
    d: usize,
    hi: i64,
}

impl ReversedHistory {
    fn new(w_hat: &[DVector<f64>], lo: i64, hi: i64, d: usize) -> Self {
        let len = (hi - lo).max(0) as usize;
        let mut data = vec![0.0; len * d];
        for s in lo.max(0)..hi.min(w_hat.len() as i64) {
            let pos = (hi - 1 - s) as usize * d;
            data[pos..pos + d].copy_from_slice(w_hat[s as usize].as_slice());
        }
        Self { data, d, hi }
    }

    /// `[w_{s-1}; ...; w_{s-l}]`.
    fn window(&self, s: i64, l: usize) -> &[f64] {
        let pos = (self.hi - s) as usize * self.d;
        &self.data[pos..pos + l * self.d]
    }

    fn sample(&self, s: i64) -> &[f64] {
        let pos = (self.hi - 1 - s) as usize * self.d;
        &self.data[pos..pos + self.d]
    }
}

/// `[M^1 | M^2 | ... | M^l]`, so `z_s` is one product with the window slice.
fn stack(params: &DacParams) -> DMatrix<f64> {
    let c = params.class();
    let mut out = DMatrix::zeros(c.d_u, c.l * c.d_x);
    for (i, b) in params.blocks().iter().enumerate() {
        out.columns_mut(i * c.d_x, c.d_x).copy_from(b);
    }
    out
}

fn unstack(g: &DMatrix<f64>, l: usize, d_x: usize) -> Vec<DMatrix<f64>> {
    (0..l).map(|i| g.columns(i * d_x, d_x).into_owned()).collect()
}

struct Evaluation {
    value: f64,
    grad: Option<DMatrix<f64>>,
    trace: Option<(Vec<DVector<f64>>, Vec<DVector<f64>>)>,
}

impl<'a> MemoryLoss<'a> {
    pub fn new(
        sys: &'a SystemDynamics,
        gain: &'a DMatrix<f64>,
        cost: &'a CostFn,
        grid: SampleGrid,
        m: usize,
        l: usize,
        w_hat: &'a [DVector<f64>],
    ) -> Result<Self> {
        sys.check_gain(gain)?;
        if m == 0 || l == 0 {
            return Err(Error::invalid("m and l must be positive"));
        }
        if w_hat.iter().any(|w| w.len() != sys.state_dim()) {
            return Err(Error::dim("disturbance history has the wrong dimension"));
        }
        let q_h = sys.sampled_closed_loop(gain, grid.h);
        let q_tail = q_h.pow((l + 1) as u32);
        Ok(Self {
            sys,
            gain,
            cost,
            grid,
            m,
            l,
            w_hat,
            q_h,
            q_tail,
        })
    }

    pub fn grid(&self) -> &SampleGrid {
        &self.grid
    }

    pub fn memory(&self) -> usize {
        self.l / self.m
    }

    /// Forward pass over `t in [t0, t1)` with parameter stack `stacks[which(s)]`
    /// at sample `s`; the gradient treats all stacks as one shared parameter.
    fn evaluate(
        &self,
        stacks: &[DMatrix<f64>],
        which: &dyn Fn(usize) -> usize,
        t0: usize,
        t1: usize,
        want_grad: bool,
        want_trace: bool,
    ) -> Evaluation {
        let (nx, nu) = (self.sys.state_dim(), self.sys.input_dim());
        let h = self.grid.h;
        let l = self.l;
        let s0 = t0.saturating_sub(l + 1);
        let len = t1 - s0;
        let hist = ReversedHistory::new(self.w_hat, s0 as i64 - l as i64, t1 as i64, nx);
        // z_s and e_s for s in [s0, t1)
        let mut z = Vec::with_capacity(len);
        let mut e = Vec::with_capacity(len);
        for s in s0..t1 {
            let win = DVectorView::from_slice(hist.window(s as i64, l), l * nx);
            let mut zs = DVector::zeros(nu);
            zs.gemv(1.0, &stacks[which(s)], &win, 0.0);
            let mut es = DVector::from_column_slice(hist.sample(s as i64));
            es.gemv(1.0, self.sys.b(), &zs, 1.0);
            z.push(zs);
            e.push(es);
        }
        // Y_{s0} = 0, Y_{s+1} = Q Y_s + h e_s
        let mut big_y = Vec::with_capacity(len);
        big_y.push(DVector::zeros(nx));
        for idx in 0..len - 1 {
            let mut next = &self.q_h * &big_y[idx];
            next.axpy(h, &e[idx], 1.0);
            big_y.push(next);
        }
        let mut value = 0.0;
        let span = t1 - t0;
        let mut lam = vec![DVector::zeros(nx); if want_grad { len } else { 0 }];
        let mut mu = vec![DVector::zeros(nu); if want_grad { len } else { 0 }];
        let mut trace = want_trace.then(|| (Vec::with_capacity(span), Vec::with_capacity(span)));
        for t in t0..t1 {
            let idx = t - s0;
            let mut y = big_y[idx].clone();
            if idx > l {
                y.gemv(-1.0, &self.q_tail, &big_y[idx - l - 1], 1.0);
            }
            let mut v = z[idx].clone();
            v.gemv(-1.0, self.gain, &y, 1.0);
            let wt = self.grid.weight(t);
            let time = self.grid.time(t);
            value += wt * self.cost.eval(time, &y, &v);
            if want_grad {
                let (gx, gu) = self.cost.grad(time, &y, &v).expect("analytic gradient requested");
                let mut l_t = gx * wt;
                l_t.gemv_tr(-wt, self.gain, &gu, 1.0);
                lam[idx] = l_t;
                mu[idx] = gu * wt;
            }
            if let Some((ys, vs)) = trace.as_mut() {
                ys.push(y);
                vs.push(v);
            }
        }
        let grad = want_grad.then(|| {
            // direct derivative w.r.t. Y_s, then the adjoint of the Y recursion
            let mut g_y = lam.clone();
            for idx in 0..len.saturating_sub(l + 1) {
                g_y[idx].gemv_tr(-1.0, &self.q_tail, &lam[idx + l + 1], 1.0);
            }
            let mut g = DMatrix::zeros(nu, l * nx);
            // adj = dF/dY_{idx+1} when visiting idx
            let mut adj = DVector::zeros(nx);
            let mut phi = DVector::zeros(nu);
            for idx in (0..len).rev() {
                phi.copy_from(&mu[idx]);
                if idx + 1 < len {
                    phi.gemv_tr(h, self.sys.b(), &adj, 1.0);
                }
                if phi.iter().any(|v| *v != 0.0) {
                    let win = DVectorView::from_slice(hist.window((s0 + idx) as i64, l), l * nx);
                    g.ger(1.0, &phi, &win, 1.0);
                }
                let mut next = g_y[idx].clone();
                next.gemv_tr(1.0, &self.q_h, &adj, 1.0);
                adj = next;
            }
            g
        });
        Evaluation { value, grad, trace }
    }

    fn window_lookup(&self, k: usize) -> impl Fn(usize) -> usize + '_ {
        let hh = self.memory() as i64;
        move |s: usize| ((s / self.m) as i64 - (k as i64 - hh)).clamp(0, hh) as usize
    }

    fn check_window(&self, params: &[&DacParams]) -> Result<Vec<DMatrix<f64>>> {
        let hh = self.memory();
        if params.len() != hh + 1 || params.iter().any(|p| p.l() != self.l) {
            return Err(Error::dim(format!("window needs {} parameter sets of length l = {}", hh + 1, self.l)));
        }
        Ok(params.iter().map(|p| stack(p)).collect())
    }

    /// Ideal cost `f_k` of slow block `k` with window `params` (`M_{k-H}..M_k`).
    pub fn ideal_cost(&self, params: &[&DacParams], k: usize) -> Result<f64> {
        let stacks = self.check_window(params)?;
        let r = self.grid.block_range(k, self.m);
        Ok(self.evaluate(&stacks, &self.window_lookup(k), r.start, r.end, false, false).value)
    }

    /// Ideal trajectory over block `k` for a window of parameters.
    pub fn ideal_trace(&self, params: &[&DacParams], k: usize) -> Result<IdealTrace> {
        let stacks = self.check_window(params)?;
        let r = self.grid.block_range(k, self.m);
        let ev = self.evaluate(&stacks, &self.window_lookup(k), r.start, r.end, false, true);
        let (y, v) = ev.trace.expect("trace requested");
        Ok(IdealTrace { value: ev.value, y, v })
    }

    /// `g_k(M) = f_k(M, ..., M)`.
    pub fn g(&self, params: &DacParams, k: usize) -> f64 {
        let r = self.grid.block_range(k, self.m);
        self.evaluate(&[stack(params)], &|_| 0, r.start, r.end, false, false).value
    }

    /// `grad g_k(M)`, analytic when the cost provides gradients.
    pub fn grad_g(&self, params: &DacParams, k: usize) -> Result<BlockGradient> {
        let r = self.grid.block_range(k, self.m);
        self.gradient_over(params, r.start, r.end, k).map(|(_, g)| g)
    }

    /// `(g_k(M), grad g_k(M))`.
    pub fn value_and_grad_g(&self, params: &DacParams, k: usize) -> Result<(f64, BlockGradient)> {
        let r = self.grid.block_range(k, self.m);
        self.gradient_over(params, r.start, r.end, k)
    }

    /// `sum_k g_k(M)` over the whole horizon.
    pub fn total(&self, params: &DacParams) -> f64 {
        self.evaluate(&[stack(params)], &|_| 0, 0, self.grid.n, false, false).value
    }

    /// Per-block values `g_k(M)` for every slow block.
    pub fn per_block(&self, params: &DacParams) -> Vec<f64> {
        let st = [stack(params)];
        (0..self.grid.slow_blocks(self.m))
            .map(|k| {
                let r = self.grid.block_range(k, self.m);
                self.evaluate(&st, &|_| 0, r.start, r.end, false, false).value
            })
            .collect()
    }

    pub fn total_value_and_grad(&self, params: &DacParams) -> Result<(f64, BlockGradient)> {
        self.gradient_over(params, 0, self.grid.n, 0)
    }

    fn gradient_over(&self, params: &DacParams, t0: usize, t1: usize, k: usize) -> Result<(f64, BlockGradient)> {
        if params.l() != self.l {
            return Err(Error::dim("parameter length does not match the loss"));
        }
        let st = stack(params);
        let nx = self.sys.state_dim();
        let (value, grad) = if self.cost.has_gradients() {
            let ev = self.evaluate(std::slice::from_ref(&st), &|_| 0, t0, t1, true, false);
            let g = ev.grad.expect("gradient requested");
            (
                ev.value,
                BlockGradient {
                    blocks: unstack(&g, self.l, nx),
                    finite_difference: false,
                },
            )
        } else {
            let value = self.evaluate(std::slice::from_ref(&st), &|_| 0, t0, t1, false, false).value;
            (value, self.finite_difference(&st, t0, t1))
        };
        if !grad.is_finite() || !value.is_finite() {
            return Err(Error::NonFiniteGradient { k });
        }
        Ok((value, grad))
    }

    /// Central differences over every coordinate. Probes may leave the
    /// class by `FD_STEP`, which the loss itself does not care about.
    fn finite_difference(&self, st: &DMatrix<f64>, t0: usize, t1: usize) -> BlockGradient {
        let mut g = DMatrix::zeros(st.nrows(), st.ncols());
        let mut probe = st.clone();
        for c in 0..st.ncols() {
            for r in 0..st.nrows() {
                let orig = probe[(r, c)];
                probe[(r, c)] = orig + FD_STEP;
                let fp = self.evaluate(std::slice::from_ref(&probe), &|_| 0, t0, t1, false, false).value;
                probe[(r, c)] = orig - FD_STEP;
                let fm = self.evaluate(std::slice::from_ref(&probe), &|_| 0, t0, t1, false, false).value;
                probe[(r, c)] = orig;
                g[(r, c)] = (fp - fm) / (2.0 * FD_STEP);
            }
        }
        BlockGradient {
            blocks: unstack(&g, self.l, self.sys.state_dim()),
            finite_difference: true,
        }
    }

    /// Gradient of the whole-horizon objective on a raw stack, no class checks.
    fn stack_grad(&self, st: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let ev = self.evaluate(std::slice::from_ref(st), &|_| 0, 0, self.grid.n, true, false);
        (ev.value, ev.grad.expect("gradient requested"))
    }
}


/// Exact quadratic form `F(m) = f0 + g0'm + m'Hm` of the whole-horizon
/// objective in the column-major vectorized stack `m`.
struct QuadraticModel {
    f0: f64,
    g0: DVector<f64>,
    hess: DMatrix<f64>,
}

impl QuadraticModel {
    fn value(&self, m: &DVector<f64>) -> f64 {
        self.f0 + self.g0.dot(m) + m.dot(&(&self.hess * m))
    }

    fn gradient(&self, m: &DVector<f64>) -> DVector<f64> {
        let mut g = self.g0.clone();
        g.gemv(2.0, &self.hess, m, 1.0);
        g
    }
}

impl MemoryLoss<'_> {
    /// Every `(y_t, v_t)` is affine in the stack with Jacobian column
    /// `(i, a, c)` equal to `rho_{t-i}[:, c d_u + a]`, where
    /// `rho_s = sum_{k=0}^{l+1} D_k (e_a w_hat_{s-k}[c])` does not depend on
    /// `t`. The Hessian blocks are lagged weighted autocorrelations of `rho`:
    /// the first block row is computed directly, the rest by shifting along
    /// diagonals.
    fn quadratic_model(&self) -> QuadraticModel {
        let (nx, nu) = (self.sys.state_dim(), self.sys.input_dim());
        let (l, n, h) = (self.l, self.grid.n, self.grid.h);
        let ch = nx * nu;
        let rows = nx + nu;
        let mut weight = DMatrix::zeros(rows, rows);
        let q = self.cost.state_weight();
        let r = self.cost.input_weight();
        weight.view_mut((0, 0), (nx, nx)).copy_from(&((q + q.transpose()) * 0.5));
        weight.view_mut((nx, nx), (nu, nu)).copy_from(&((r + r.transpose()) * 0.5));

        // rho_s stacked for s in [-(l+1), n), leading blocks zero
        let pad = l + 1;
        let mut rho = DMatrix::zeros(rows * (n + pad), ch);
        let x_of = |s: usize| {
            let mut xs = DMatrix::zeros(nx, ch);
            if let Some(w) = self.w_hat.get(s) {
                for c in 0..nx {
                    for a in 0..nu {
                        xs.column_mut(c * nu + a).axpy(w[c], &self.sys.b().column(a), 0.0);
                    }
                }
            }
            xs
        };
        // U_s = Q U_{s-1} + X_{s-1}; T_s = U_s - Q^{l+1} U_{s-l-1}
        let mut u_hist: Vec<DMatrix<f64>> = Vec::with_capacity(n);
        let mut u_cur = DMatrix::zeros(nx, ch);
        for s in 0..n {
            if s > 0 {
                u_cur = &self.q_h * &u_cur + x_of(s - 1);
            }
            u_hist.push(u_cur.clone());
            let mut t_s = u_cur.clone();
            if s > l {
                t_s -= &self.q_tail * &u_hist[s - l - 1];
            }
            let y_part = t_s * h;
            let mut v_part = -(self.gain * &y_part);
            if let Some(w) = self.w_hat.get(s) {
                for c in 0..nx {
                    for a in 0..nu {
                        v_part[(a, c * nu + a)] += w[c];
                    }
                }
            }
            let base = (s + pad) * rows;
            rho.view_mut((base, 0), (nx, ch)).copy_from(&y_part);
            rho.view_mut((base + nx, 0), (nu, ch)).copy_from(&v_part);
        }
        let rho_at = |s: i64| -> Option<DMatrix<f64>> {
            (s >= 0).then(|| rho.view(((s as usize + pad) * rows, 0), (rows, ch)).into_owned())
        };
        // left_t = w_t * W rho_{t-1}
        let mut left = DMatrix::zeros(rows * n, ch);
        for t in 0..n {
            if let Some(r1) = rho_at(t as i64 - 1) {
                left.view_mut((t * rows, 0), (rows, ch)).copy_from(&(&weight * r1 * self.grid.weight(t)));
            }
        }
        let cross = |s: i64, s2: i64| -> DMatrix<f64> {
            match (rho_at(s), rho_at(s2)) {
                (Some(a), Some(b)) => a.transpose() * &weight * b,
                _ => DMatrix::zeros(ch, ch),
            }
        };
        let f = self.grid.final_weight;
        let p = l * ch;
        let mut hess = DMatrix::zeros(p, p);
        for j in 1..=l {
            let view = rho.view(((pad - j) * rows, 0), (rows * n, ch));
            let mut block = left.tr_mul(&view);
            let (mut i1, mut j1) = (1usize, j);
            loop {
                hess.view_mut(((i1 - 1) * ch, (j1 - 1) * ch), (ch, ch)).copy_from(&block);
                if i1 != j1 {
                    hess.view_mut(((j1 - 1) * ch, (i1 - 1) * ch), (ch, ch)).copy_from(&block.transpose());
                }
                if j1 == l {
                    break;
                }
                let last = n as i64 - 1;
                block -= cross(last - i1 as i64, last - j1 as i64) * f;
                block += cross(last - 1 - i1 as i64, last - 1 - j1 as i64) * (f - 1.0);
                i1 += 1;
                j1 += 1;
            }
        }
        let (f0, g0) = self.stack_grad(&DMatrix::zeros(nu, l * nx));
        QuadraticModel {
            f0,
            g0: DVector::from_column_slice(g0.as_slice()),
            hess,
        }
    }
}

/// Result of minimizing `sum_k g_k(M)` over the class.
#[derive(Clone, Debug)]
pub struct Minimizer {
    pub params: DacParams,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Frank-Wolfe duality gap at the returned point, an upper bound on
    /// `F(M) - min F` for the convex objective.
    pub gap_estimate: f64,
}

/// Stopping tolerance on the duality gap, relative to `max(1, |F|)`.
pub const MINIMIZE_TOL: f64 = 1e-8;

fn vec_to_params(m: &DVector<f64>, class: &ClassSpec) -> Result<DacParams> {
    let st = DMatrix::from_column_slice(class.d_u, class.l * class.d_x, m.as_slice());
    project(&unstack(&st, class.l, class.d_x), class)
}

fn params_to_vec(p: &DacParams) -> DVector<f64> {
    DVector::from_column_slice(stack(p).as_slice())
}

/// `<g, z> + sum_i b_i ||g_i||_*` for a feasible `z`.
fn duality_gap(grad: &DVector<f64>, z: &DVector<f64>, class: &ClassSpec) -> f64 {
    let ch = class.d_u * class.d_x;
    let mut gap = grad.dot(z);
    for i in 0..class.l {
        let g = DMatrix::from_column_slice(class.d_u, class.d_x, &grad.as_slice()[i * ch..(i + 1) * ch]);
        gap += class.bound(i + 1) * g.svd(false, false).singular_values.sum();
    }
    gap
}

/// Derivatives of the log-det barrier of one block, `-log det(b^2 I - N'N)` with `N` the block
/// or its transpose, whichever gives the smaller Gram matrix.
struct BlockBarrier {
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

fn block_barrier(m: &DMatrix<f64>, b: f64, want_hess: bool) -> Option<BlockBarrier> {
    let flip = m.nrows() < m.ncols();
    let nm = if flip { m.transpose() } else { m.clone() };
    let k = nm.ncols();
    let s = DMatrix::identity(k, k) * (b * b) - nm.transpose() * &nm;
    let chol = s.cholesky()?;
    let sigma = chol.inverse();
    let ns = &nm * &sigma;
    let to_m = |g: DMatrix<f64>| if flip { g.transpose() } else { g };
    let grad_m = to_m(&ns * 2.0);
    let ch = m.len();
    let mut hess = DMatrix::zeros(if want_hess { ch } else { 0 }, if want_hess { ch } else { 0 });
    if want_hess {
        for idx in 0..ch {
            let mut e = DMatrix::zeros(m.nrows(), m.ncols());
            e[idx] = 1.0;
            let en = if flip { e.transpose() } else { e };
            let sym = en.transpose() * &nm + nm.transpose() * &en;
            let d = &en * &sigma * 2.0 + &ns * sym * &sigma * 2.0;
            hess.column_mut(idx).copy_from_slice(to_m(d).as_slice());
        }
    }
    Some(BlockBarrier {
        grad: DVector::from_column_slice(grad_m.as_slice()),
        hess,
    })
}

/// `d/ds` of the block barrier at `m + s e`, evaluated at `s = 0`; `None`
/// outside the class.
fn barrier_slope(m: &DMatrix<f64>, e: &DMatrix<f64>, b: f64) -> Option<f64> {
    let flip = m.nrows() < m.ncols();
    let (nm, ne) = if flip { (m.transpose(), e.transpose()) } else { (m.clone(), e.clone()) };
    let k = nm.ncols();
    let s = DMatrix::identity(k, k) * (b * b) - nm.transpose() * &nm;
    let chol = s.cholesky()?;
    let sym = ne.transpose() * &nm + nm.transpose() * &ne;
    Some(chol.solve(&sym).trace())
}

/// Minimizes `F(M) = sum_k g_k(M)` over the class with a log-det barrier
/// path-following method on the exact quadratic form, started from half of
/// the first of `starts`; the starts are also kept as candidates. Stops on
/// the Frank-Wolfe duality gap. Costs need analytic gradients.
pub fn minimize_total(loss: &MemoryLoss<'_>, class: &ClassSpec, starts: &[&DacParams]) -> Result<Minimizer> {
    if !loss.cost.has_gradients() {
        return Err(Error::invalid("whole-horizon minimization needs analytic cost gradients"));
    }
    if class.l != loss.l || class.d_u != loss.sys.input_dim() || class.d_x != loss.sys.state_dim() {
        return Err(Error::dim("class does not match the loss"));
    }
    let first = starts.first().ok_or_else(|| Error::invalid("no starting point given"))?;
    let model = loss.quadratic_model();
    if !all_finite_mat(&model.hess) || !model.f0.is_finite() {
        return Err(Error::NonFiniteGradient { k: 0 });
    }
    let ch = class.d_u * class.d_x;
    let relative = |v: f64| MINIMIZE_TOL * v.abs().max(1.0);
    // blocks with a zero bound stay at zero
    let live: Vec<usize> = (0..class.l).filter(|&i| class.bound(i + 1) > 0.0).collect();
    let nu_barrier = (live.len() * class.d_u.min(class.d_x)) as f64;
    let block_of = |m: &DVector<f64>, i: usize| DMatrix::from_column_slice(class.d_u, class.d_x, &m.as_slice()[i * ch..(i + 1) * ch]);
    let barrier = |m: &DVector<f64>, want_hess: bool| -> Option<Vec<BlockBarrier>> {
        live.iter().map(|&i| block_barrier(&block_of(m, i), class.bound(i + 1), want_hess)).collect()
    };

    let mut m = params_to_vec(&project(first.blocks(), class)?) * 0.5;
    let mut t = nu_barrier / model.value(&m).abs().max(1.0);
    let mut iterations = 0;
    let mut gap = f64::INFINITY;
    let mut converged = false;
    'outer: for _ in 0..40 {
        for _ in 0..60 {
            let bars = barrier(&m, true).ok_or_else(|| Error::invalid("barrier iterate left the class"))?;
            let mut grad = model.gradient(&m) * t;
            let mut hess = &model.hess * (2.0 * t);
            for (&i, bb) in live.iter().zip(&bars) {
                grad.rows_mut(i * ch, ch).axpy(1.0, &bb.grad, 1.0);
                let mut view = hess.view_mut((i * ch, i * ch), (ch, ch));
                view += &bb.hess;
            }
            let chol = match hess.cholesky() {
                Some(c) => c,
                None => break 'outer,
            };
            let step = -chol.solve(&grad);
            let decrement = (-grad.dot(&step)).max(0.0).sqrt();
            iterations += 1;
            if decrement < 1e-12 {
                break;
            }
            // exact line search: the directional derivative is increasing
            let slope0 = model.gradient(&m).dot(&step);
            let curv = step.dot(&(&model.hess * &step));
            let deriv = |s: f64| -> Option<f64> {
                let cand = &m + &step * s;
                let mut d = t * (slope0 + 2.0 * s * curv);
                for &i in &live {
                    d += barrier_slope(&block_of(&cand, i), &block_of(&step, i), class.bound(i + 1))?;
                }
                Some(d)
            };
            let (mut lo, mut hi) = (0.0, 1.0);
            while hi < 1e6 && deriv(hi).is_some_and(|d| d < 0.0) {
                lo = hi;
                hi *= 2.0;
            }
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if deriv(mid).is_some_and(|d| d < 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            if lo == 0.0 {
                break 'outer;
            }
            m += &step * lo;
            if decrement < 1e-3 {
                break;
            }
        }
        let value = model.value(&m);
        gap = duality_gap(&model.gradient(&m), &m, class);
        log::debug!("barrier t = {t:.3e}, newton steps {iterations}, F = {value:.12e}, gap = {gap:.3e}");
        if gap <= relative(value) {
            converged = true;
            break;
        }
        t *= 20.0;
    }

    // exact evaluation of the result and the starts
    let mut best = vec_to_params(&m, class)?;
    let mut best_value = loss.total(&best);
    for s in starts {
        let cand = project(s.blocks(), class)?;
        let v = loss.total(&cand);
        if v < best_value {
            best_value = v;
            best = cand;
        }
    }
    let (_, grad) = loss.stack_grad(&stack(&best));
    let exact_gap = duality_gap(&DVector::from_column_slice(grad.as_slice()), &params_to_vec(&best), class);
    if exact_gap.is_finite() {
        gap = exact_gap.max(0.0);
        converged = converged && gap <= 10.0 * relative(best_value);
    }
    Ok(Minimizer {
        params: best,
        value: best_value,
        iterations,
        converged,
        gap_estimate: gap,
    })
}

/// `a (l h kappa_B + 1) kappa^2 decay^(i-1)`.
pub fn psi_bound(radius_a: f64, l: usize, h: f64, kappa_b: f64, kappa: f64, decay: f64, i: usize) -> f64 {
    radius_a * (l as f64 * h * kappa_b + 1.0) * kappa * kappa * decay.powi(i as i32 - 1)
}

/// Largest `||Psi_i|| / bound_i` with the index attaining it.
pub fn psi_bound_ratio(psi: &PsiCoefficients, bound: impl Fn(usize) -> f64) -> (f64, usize) {
    psi.psi
        .iter()
        .enumerate()
        .map(|(i, p)| (spectral_norm(p) / bound(i), i))
        .fold((0.0, 0), |acc, x| if x.0 > acc.0 { x } else { acc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (SystemDynamics, DMatrix<f64>, CostFn) {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.2, -0.2]);
        let sys = SystemDynamics::new(a, DMatrix::identity(2, 2)).unwrap();
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.8]);
        let cost = CostFn::quadratic(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        (sys, k, cost)
    }

    fn random_params(rng: &mut ChaCha8Rng, class: &ClassSpec) -> DacParams {
        let raw: Vec<_> = (0..class.l)
            .map(|_| DMatrix::from_fn(class.d_u, class.d_x, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        project(&raw, class).unwrap()
    }

    fn random_history(rng: &mut ChaCha8Rng, n: usize) -> Vec<DVector<f64>> {
        (0..n).map(|_| DVector::from_fn(2, |_, _| rng.random_range(-0.5..0.5))).collect()
    }

    #[test]
    fn psi_without_parameters_is_a_power() {
        let (sys, k, _) = setup();
        let class = ClassSpec::new(2.0, 0.1, 0.95, 3, 2, 2).unwrap();
        let zero = DacParams::zeros(&class);
        let window = vec![&zero; 4];
        let psi = psi_table(&sys, &k, 0.1, &window, 6).unwrap();
        for i in 0..=6 {
            let expect = if i <= 3 { psi.q_h.pow(i as u32) } else { DMatrix::zeros(2, 2) };
            assert!((&psi.psi[i] - expect).amax() < 1e-14);
        }
    }

    #[test]
    fn psi_single_block() {
        let (sys, k, _) = setup();
        let class = ClassSpec::new(20.0, 0.1, 1.0, 1, 2, 2).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[0.3, -0.1, 0.2, 0.4]);
        let p = DacParams::new(vec![m.clone()], &class).unwrap();
        let psi = psi_table(&sys, &k, 0.1, &[&p, &p], 2).unwrap();
        assert!((&psi.psi[1] - (&psi.q_h + sys.b() * &m)).amax() < 1e-14);
    }

    #[test]
    fn psi_sum_matches_recursion() {
        let (sys, k, _) = setup();
        let (h, l) = (0.1, 4);
        let class = ClassSpec::new(2.0, h, 0.95, l, 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params: Vec<DacParams> = (0..=l).map(|_| random_params(&mut rng, &class)).collect();
        let t = 12usize;
        let w = random_history(&mut rng, t + 1);
        // params[j] in force at sample t - j
        let refs: Vec<&DacParams> = params.iter().collect();
        let psi = psi_table(&sys, &k, h, &refs, 2 * l).unwrap();
        let mut closed = DVector::zeros(2);
        for i in 0..=2 * l {
            closed += &psi.psi[i] * &w[t - i] * h;
        }
        let q = sys.sampled_closed_loop(&k, h);
        let mut x = DVector::zeros(2);
        for s in t - l..=t {
            let p = &params[t - s];
            let mut z = DVector::zeros(2);
            for i in 1..=l {
                z += p.block(i) * &w[s - i];
            }
            x = &q * x + (sys.b() * z + &w[s]) * h;
        }
        assert!((closed - &x).norm() <= 1e-12 * x.norm().max(1e-300));
    }

    #[test]
    fn fast_evaluator_matches_psi_reference() {
        let (sys, k, cost) = setup();
        let (h, m, hh) = (0.1, 3, 2);
        let l = m * hh;
        let class = ClassSpec::new(2.0, h, 0.95, l, 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params: Vec<DacParams> = (0..=hh).map(|_| random_params(&mut rng, &class)).collect();
        let grid = SampleGrid::full(h, 30);
        let w = random_history(&mut rng, 30);
        let loss = MemoryLoss::new(&sys, &k, &cost, grid, m, l, &w).unwrap();
        for kk in [0, 1, 4, 9] {
            let refs: Vec<&DacParams> = params.iter().collect();
            let win = IdealWindow::new(&sys, &k, h, m, kk, refs.clone(), &w).unwrap();
            let reference = ideal_cost(&win, &cost, &grid).unwrap();
            let fast = loss.ideal_cost(&refs, kk).unwrap();
            assert!((reference - fast).abs() <= 1e-12 * reference.abs().max(1.0), "{reference} vs {fast}");
        }
    }

    #[test]
    fn zero_history_gives_zero_gradient() {
        let (sys, k, cost) = setup();
        let class = ClassSpec::new(2.0, 0.1, 0.95, 4, 2, 2).unwrap();
        let w = vec![DVector::zeros(2); 20];
        let loss = MemoryLoss::new(&sys, &k, &cost, SampleGrid::full(0.1, 20), 2, 4, &w).unwrap();
        let g = loss.grad_g(&DacParams::zeros(&class), 3).unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn scalar_gradient_matches_hand_derivation() {
        // A = 0, B = 1, K = 1, l = m = 1: y_t = h(w_{t-1} + M w_{t-2}) + h(1-h)(w_{t-2} + M w_{t-3})
        let sys = SystemDynamics::new(DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).unwrap();
        let k = DMatrix::identity(1, 1);
        let cost = CostFn::quadratic(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        let h = 0.2;
        let w: Vec<DVector<f64>> = [0.3, -0.5, 0.7, 0.2].iter().map(|v| DVector::from_element(1, *v)).collect();
        let class = ClassSpec::new(5.0, h, 1.0, 1, 1, 1).unwrap();
        let mm = 0.4;
        let p = DacParams::new(vec![DMatrix::from_element(1, 1, mm)], &class).unwrap();
        let loss = MemoryLoss::new(&sys, &k, &cost, SampleGrid::full(h, 4), 1, 1, &w).unwrap();
        let t = 3;
        let q = 1.0 - h;
        let wv = |s: usize| w[s][0];
        let y = h * (wv(t - 1) + mm * wv(t - 2)) + h * q * (wv(t - 2) + mm * wv(t - 3));
        let dy = h * wv(t - 2) + h * q * wv(t - 3);
        let v = -y + mm * wv(t - 1);
        let dv = -dy + wv(t - 1);
        let expect = 2.0 * y * dy + 2.0 * v * dv;
        let g = loss.grad_g(&p, t).unwrap();
        assert!((g.blocks[0][(0, 0)] - expect).abs() < 1e-14);
        assert!((loss.g(&p, t) - (y * y + v * v)).abs() < 1e-15);
    }

    #[test]
    fn analytic_gradient_matches_fallback() {
        let (sys, k, cost) = setup();
        let (h, m, l) = (0.1, 2, 4);
        let class = ClassSpec::new(2.0, h, 0.95, l, 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_params(&mut rng, &class);
        let w = random_history(&mut rng, 16);
        let grid = SampleGrid::full(h, 16);
        let fd_cost = cost.clone().without_gradients();
        let a = MemoryLoss::new(&sys, &k, &cost, grid, m, l, &w).unwrap().grad_g(&p, 5).unwrap();
        let f = MemoryLoss::new(&sys, &k, &fd_cost, grid, m, l, &w).unwrap().grad_g(&p, 5).unwrap();
        assert!(f.finite_difference && !a.finite_difference);
        for (ga, gf) in a.blocks.iter().zip(&f.blocks) {
            assert!((ga - gf).amax() <= 1e-7 * (1.0 + ga.amax()));
        }
    }

    #[test]
    fn ogdm_step_boundary_and_identity() {
        let class = ClassSpec::new(1.0, 0.5, 1.0, 1, 1, 1).unwrap();
        let p = DacParams::zeros(&class);
        let zero = BlockGradient {
            blocks: vec![DMatrix::zeros(1, 1)],
            finite_difference: false,
        };
        assert_eq!(ogdm_step(&p, &zero, 1.0).unwrap(), p);
        let push = BlockGradient {
            blocks: vec![DMatrix::from_element(1, 1, -10.0)],
            finite_difference: false,
        };
        let out = ogdm_step(&p, &push, 1.0).unwrap();
        assert!((out.block(1)[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn whole_horizon_minimum_matches_scalar_grid() {
        let sys = SystemDynamics::new(DMatrix::from_element(1, 1, 1.0), DMatrix::identity(1, 1)).unwrap();
        let k = DMatrix::from_element(1, 1, 2.0);
        let cost = CostFn::quadratic(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        let h = 0.1;
        let w: Vec<DVector<f64>> = (0..60).map(|s| DVector::from_element(1, (0.3 * s as f64).sin() * 0.5)).collect();
        let class = ClassSpec::new(2.0, h, 0.9, 1, 1, 1).unwrap();
        let loss = MemoryLoss::new(&sys, &k, &cost, SampleGrid::full(h, 60), 1, 1, &w).unwrap();
        let zero = DacParams::zeros(&class);
        let min = minimize_total(&loss, &class, &[&zero]).unwrap();
        assert!(min.converged);
        let mut grid_best = f64::INFINITY;
        for i in 0..=4000 {
            let mv = -0.2 + 0.4 * i as f64 / 4000.0;
            let p = DacParams::new(vec![DMatrix::from_element(1, 1, mv)], &class).unwrap();
            grid_best = grid_best.min(loss.total(&p));
        }
        assert!(min.value <= grid_best + min.gap_estimate, "{min:?} {grid_best}");
        assert!(grid_best - min.value < 1e-6);
    }

    #[test]
    fn quadratic_model_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let a = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-0.5..0.5));
        let b = DMatrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0));
        let sys = SystemDynamics::new(a, b).unwrap();
        let k = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-0.5..0.5));
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let cost = CostFn::quadratic(q, DMatrix::identity(3, 3) * 0.5).unwrap();
        let grid = SampleGrid::new(3.37, 0.1).unwrap();
        assert!(grid.final_weight < 1.0);
        let w: Vec<DVector<f64>> = (0..grid.n).map(|_| DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0))).collect();
        let (m, l) = (3, 6);
        let loss = MemoryLoss::new(&sys, &k, &cost, grid, m, l, &w).unwrap();
        let model = loss.quadratic_model();
        let class = ClassSpec::new(4.0, 0.1, 0.95, l, 3, 2).unwrap();
        for _ in 0..5 {
            let blocks: Vec<DMatrix<f64>> = (0..l).map(|_| DMatrix::from_fn(3, 2, |_, _| rng.random_range(-0.1..0.1))).collect();
            let p = project(&blocks, &class).unwrap();
            let exact = loss.total(&p);
            let approx = model.value(&params_to_vec(&p));
            assert!((exact - approx).abs() <= 1e-11 * exact.abs().max(1.0), "{exact} vs {approx}");
        }
    }
}
