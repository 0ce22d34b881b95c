//! Backstepping kernels.
//!
//! Closed-form Volterra kernels on the triangle `|xi| <= |y| <= l`:
//!
//! ```text
//! p(y,xi) = -sgn(y)/2 sqrt(lambda (y+xi)/(y-xi)) I1(sqrt(lambda (y^2-xi^2)))
//! q(y,xi) = -sgn(y)/2 sqrt(lambda (y+xi)/(y-xi)) J1(sqrt(lambda (y^2-xi^2)))
//! ```
//!
//! and the singular series kernels driving the delay compensation,
//!
//! ```text
//! gamma_1(x,theta,s,xi) = (1/L) sum_{n,m} e^{(lambda - n^2 pi^2/4L^2 - m^2 pi^2/4l^2) s}
//!                          p_{1m} phi_n(x) phi_n(theta) psi_m(xi)
//! ```
//!
//! (`gamma_2` with `-p_{2m}`; `eta_1`, `eta_2` with `q_{im}` and no `lambda`).
//! The `s = 0` slice is distributional (`p(+-l,xi) delta(x-theta)`) and is
//! exposed only through its weak action.

use ndarray::Array2;

use crate::basis::RectangleSpec;
use crate::bessel::{bessel_i1, bessel_j1};
use crate::error::{Error, Result};
use crate::quad::adaptive_simpson;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClosedKind {
    /// Forward kernel, modified Bessel I1.
    P,
    /// Inverse kernel, Bessel J1.
    Q,
}

/// Closed-form Volterra kernel `p` or `q` with reaction coefficient `lambda`.
#[derive(Debug, Clone, Copy)]
pub struct ClosedFormKernel {
    pub kind: ClosedKind,
    pub lambda: f64,
    pub rect: RectangleSpec,
}

/// Entire series `S(w) = sum_k w^k / (k! (k+1)!)`; both kernels reduce to
/// `-(lambda/4) (y+xi) S(+-lambda (y^2-xi^2)/4)`, which is regular across
/// the diagonals.
fn entire_s(w: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= w / (k as f64 * (k + 1) as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1.0) {
            break;
        }
    }
    sum
}

/// `S'(w) = sum_j w^j / (j! (j+2)!)`.
fn entire_s_prime(w: f64) -> f64 {
    let mut term = 0.5;
    let mut sum = 0.5;
    for j in 1..200 {
        term *= w / (j as f64 * (j + 2) as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1.0) {
            break;
        }
    }
    sum
}

impl ClosedFormKernel {
    pub fn new(kind: ClosedKind, lambda: f64, rect: RectangleSpec) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::contract("reaction coefficient lambda must be > 0"));
        }
        Ok(ClosedFormKernel { kind, lambda, rect })
    }

    fn sign(&self) -> f64 {
        match self.kind {
            ClosedKind::P => 1.0,
            ClosedKind::Q => -1.0,
        }
    }

    /// Checked evaluation on the triangle `|xi| <= |y| <= l`.
    pub fn eval(&self, y: f64, xi: f64) -> Result<f64> {
        let tol = 1e-12 * self.rect.ly.max(1.0);
        if y.abs() > self.rect.ly + tol || xi.abs() > y.abs() + tol {
            return Err(Error::contract(format!(
                "(y,xi)=({y},{xi}) outside the kernel triangle"
            )));
        }
        Ok(self.eval_unchecked(y, xi))
    }

    /// Evaluation without the domain check. Diagonals are exact:
    /// `p(y,y) = -lambda y / 2`, `p(y,-y) = 0`; `sgn(0)` is taken as 0.
    pub fn eval_unchecked(&self, y: f64, xi: f64) -> f64 {
        if xi == y {
            return -0.5 * self.lambda * y;
        }
        if xi == -y {
            return 0.0;
        }
        let diff = y - xi;
        let sum = y + xi;
        // Near either diagonal the sqrt form loses accuracy; switch to the
        // regular series, which agrees identically.
        if diff.abs() < 1e-6 || sum.abs() < 1e-6 {
            return self.eval_regular(y, xi);
        }
        // (y - xi)(y + xi) avoids the cancellation of y^2 - xi^2 near the
        // diagonals.
        let z2 = self.lambda * diff * sum;
        let z = z2.max(0.0).sqrt();
        let bess = match self.kind {
            ClosedKind::P => bessel_i1(z),
            ClosedKind::Q => bessel_j1(z),
        };
        -0.5 * y.signum() * (self.lambda * sum / diff).sqrt() * bess
    }

    /// `-(lambda/4)(y+xi) S(+-lambda (y^2-xi^2)/4)`.
    fn eval_regular(&self, y: f64, xi: f64) -> f64 {
        let w = 0.25 * self.sign() * self.lambda * ((y - xi) * (y + xi));
        -0.25 * self.lambda * (y + xi) * entire_s(w)
    }

    /// Analytic `partial_xi` of the kernel, from the regular form.
    pub fn xi_derivative(&self, y: f64, xi: f64) -> f64 {
        let sg = self.sign();
        let w = 0.25 * sg * self.lambda * ((y - xi) * (y + xi));
        let s = entire_s(w);
        let sp = entire_s_prime(w);
        -0.25 * self.lambda * s
            + 0.125 * sg * self.lambda * self.lambda * xi * (y + xi) * sp
    }
}

/// Fourier coefficients `p_{im} = (1/l) int psi_m(xi) p((-1)^{i-1} l, xi) dxi`
/// for `i` in `{1, 2}`, by adaptive quadrature independent of any grid.
pub fn compute_pm_coeffs(k: &ClosedFormKernel, i: usize, m_modes: usize) -> Result<Vec<f64>> {
    if !(i == 1 || i == 2) || m_modes == 0 {
        return Err(Error::contract("coefficient row must be 1 or 2, M >= 1"));
    }
    let ly = k.rect.ly;
    let y = if i == 1 { ly } else { -ly };
    let mut out = Vec::with_capacity(m_modes);
    for m in 1..=m_modes {
        let rect = k.rect;
        let f = |xi: f64| rect.phi_y(m, xi) * k.eval_unchecked(y, xi);
        let v = adaptive_simpson(&f, -ly, ly, 1e-10, 4 * m + 8)?;
        out.push(v / ly);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    Gamma1,
    Gamma2,
    Eta1,
    Eta2,
}

impl SeriesKind {
    /// Closed-form generator, coefficient row, and overall series sign.
    pub fn generator(self) -> (ClosedKind, usize, f64) {
        match self {
            SeriesKind::Gamma1 => (ClosedKind::P, 1, 1.0),
            SeriesKind::Gamma2 => (ClosedKind::P, 2, -1.0),
            SeriesKind::Eta1 => (ClosedKind::Q, 1, 1.0),
            SeriesKind::Eta2 => (ClosedKind::Q, 2, -1.0),
        }
    }

    /// Reaction term in the kernel PDE: `lambda` for gamma, 0 for eta.
    pub fn effective_lambda(self, lambda: f64) -> f64 {
        match self {
            SeriesKind::Gamma1 | SeriesKind::Gamma2 => lambda,
            SeriesKind::Eta1 | SeriesKind::Eta2 => 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SeriesKind::Gamma1 => "gamma1",
            SeriesKind::Gamma2 => "gamma2",
            SeriesKind::Eta1 => "eta1",
            SeriesKind::Eta2 => "eta2",
        }
    }
}

/// Truncated double-series kernel with precomputed signed coefficients.
#[derive(Debug, Clone)]
pub struct SeriesKernel {
    pub kind: SeriesKind,
    /// Reaction rate in the exponent (0 for eta kinds).
    pub lambda: f64,
    pub rect: RectangleSpec,
    pub n_modes: usize,
    pub m_modes: usize,
    /// Signed coefficients: `p_{1m}`, `-p_{2m}`, `q_{1m}`, or `-q_{2m}`.
    pub coeffs: Vec<f64>,
    /// Smallest admissible evolution time; the `s = 0` slice is
    /// distributional and only reachable through the weak action.
    pub s_min: f64,
    closed: ClosedFormKernel,
    row_y: f64,
    sign: f64,
}

/// Smallest mode count whose dropped tail passes the damping test
/// `e^{-decay(M) s_min} * coeff_scale < tol`.
fn modes_for(decay: impl Fn(usize) -> f64, s_min: f64, coeff_scale: f64, tol: f64) -> usize {
    for n in 1..=4096 {
        if (-decay(n) * s_min).exp() * coeff_scale < tol {
            return n;
        }
    }
    4096
}

impl SeriesKernel {
    /// Build with s-aware truncation: N and M are chosen so the dropped
    /// Gaussian-damped tail at `s_min` is below `tail_tol`.
    pub fn build(
        kind: SeriesKind,
        lambda: f64,
        rect: RectangleSpec,
        s_min: f64,
        tail_tol: f64,
    ) -> Result<Self> {
        if !(s_min > 0.0) {
            return Err(Error::contract("s_min must be > 0"));
        }
        let (ck, row, sign) = kind.generator();
        let closed = ClosedFormKernel::new(ck, lambda, rect)?;
        // Grow the coefficient vector until the m-tail passes.
        let mut coeffs: Vec<f64>;
        let mut m_modes = 16;
        loop {
            let fresh = compute_pm_coeffs(&closed, row, m_modes)?;
            coeffs = fresh.iter().map(|c| sign * c).collect();
            let scale: f64 = coeffs.iter().map(|c| c.abs()).sum();
            if (-rect.decay_y(m_modes) * s_min).exp() * scale < tail_tol || m_modes >= 2048 {
                break;
            }
            m_modes *= 2;
        }
        let scale: f64 = coeffs.iter().map(|c| c.abs()).sum();
        let m_needed = modes_for(|m| rect.decay_y(m), s_min, scale, tail_tol).min(m_modes);
        coeffs.truncate(m_needed);
        let n_modes = modes_for(|n| rect.decay_x(n), s_min, scale, tail_tol);
        Ok(SeriesKernel {
            kind,
            lambda: kind.effective_lambda(lambda),
            rect,
            n_modes,
            m_modes: m_needed,
            coeffs,
            s_min,
            closed,
            row_y: if row == 1 { rect.ly } else { -rect.ly },
            sign,
        })
    }

    /// Build with explicit truncation, for convergence studies.
    pub fn with_truncation(
        kind: SeriesKind,
        lambda: f64,
        rect: RectangleSpec,
        s_min: f64,
        n_modes: usize,
        m_modes: usize,
    ) -> Result<Self> {
        if !(s_min > 0.0) {
            return Err(Error::contract("s_min must be > 0"));
        }
        let (ck, row, sign) = kind.generator();
        let closed = ClosedFormKernel::new(ck, lambda, rect)?;
        let coeffs = compute_pm_coeffs(&closed, row, m_modes)?
            .into_iter()
            .map(|c| sign * c)
            .collect();
        Ok(SeriesKernel {
            kind,
            lambda: kind.effective_lambda(lambda),
            rect,
            n_modes,
            m_modes,
            coeffs,
            s_min,
            closed,
            row_y: if row == 1 { rect.ly } else { -rect.ly },
            sign,
        })
    }

    fn check_s(&self, s: f64) -> Result<()> {
        if s + 1e-14 < self.s_min {
            Err(Error::contract(format!(
                "s={s} below the kernel's s_min={}",
                self.s_min
            )))
        } else {
            Ok(())
        }
    }

    #[inline]
    fn damp_x(&self, n: usize, s: f64) -> f64 {
        (-self.rect.decay_x(n) * s).exp()
    }

    /// x-theta heat factor `sum_n e^{-n^2 pi^2 s / 4L^2} phi_n(x) phi_n(theta)`.
    fn xfactor(&self, x: f64, theta: f64, s: f64) -> f64 {
        let mut acc = 0.0;
        for n in 1..=self.n_modes {
            acc += self.damp_x(n, s) * self.rect.phi_x(n, x) * self.rect.phi_x(n, theta);
        }
        acc
    }

    /// `sum_m e^{-m^2 pi^2 s / 4l^2} c_m psi_m(xi)`.
    fn yfactor(&self, s: f64, xi: f64) -> f64 {
        let mut acc = 0.0;
        for (idx, c) in self.coeffs.iter().enumerate() {
            acc += (-self.rect.decay_y(idx + 1) * s).exp() * c * self.rect.phi_y(idx + 1, xi);
        }
        acc
    }

    /// `sum_m e^{-m^2 pi^2 s / 4l^2} c_m psi_m'(side * l)`.
    pub fn yfactor_dxi(&self, s: f64, side: i8) -> f64 {
        let mut acc = 0.0;
        for (idx, c) in self.coeffs.iter().enumerate() {
            acc += (-self.rect.decay_y(idx + 1) * s).exp()
                * c
                * self.rect.dphi_y_at_side(idx + 1, side);
        }
        acc
    }

    #[inline]
    fn combine(&self, s: f64, xfac: f64, yfac: f64) -> f64 {
        (self.lambda * s).exp() / self.rect.lx * xfac * yfac
    }

    /// Separable evaluation of the kernel at `s >= s_min`.
    pub fn eval(&self, x: f64, theta: f64, s: f64, xi: f64) -> Result<f64> {
        self.check_s(s)?;
        Ok(self.combine(s, self.xfactor(x, theta, s), self.yfactor(s, xi)))
    }

    /// Term-wise differentiated boundary trace `partial_xi` at `xi = side*l`.
    pub fn eval_xi_trace(&self, x: f64, theta: f64, s: f64, side: i8) -> Result<f64> {
        self.check_s(s)?;
        Ok(self.combine(s, self.xfactor(x, theta, s), self.yfactor_dxi(s, side)))
    }

    /// Per-x-mode trace gain `F_n(s, side)` such that
    /// `int int partial_xi K(x,theta,s,side*l) v(theta) dtheta
    ///  = sum_n F_n(s,side) phi_n(x) g_n` with `g_n = (1/L) int phi_n v`.
    pub fn trace_mode_gain(&self, n: usize, s: f64, side: i8) -> f64 {
        ((self.lambda - self.rect.decay_x(n)) * s).exp() * self.yfactor_dxi(s, side)
    }

    /// Per-(n,m) volume gain such that
    /// `int int K(x,theta,s,xi) u(theta,xi) dxi dtheta
    ///  = sum_{n,m} G_{nm}(s) a_{nm}(u) phi_n(x)`.
    pub fn volume_mode_gain(&self, n: usize, m: usize, s: f64) -> f64 {
        self.rect.ly
            * ((self.lambda - self.rect.decay_x(n) - self.rect.decay_y(m)) * s).exp()
            * self.coeffs[m - 1]
    }

    /// Exact integrals of the trace kernel over the sigma-panel
    /// `[k dt, (k+1) dt]` against the linear interpolation weights of a
    /// history sampled at multiples of `dt`:
    ///
    /// returns `(a, b)` with
    /// `int_panel F_n(sigma, side) h(sigma) dsigma ~ a h(k dt) + b h((k+1) dt)`
    /// for piecewise-linear `h`.  Each m-term is an exponential, so the panel
    /// integrals are analytic; this captures the integrable `1/sqrt(sigma)`
    /// concentration of the trace kernel near `sigma = 0` that a sampled
    /// trapezoid rule misses.
    pub fn trace_panel_weights(&self, n: usize, side: i8, k: usize, dt: f64) -> (f64, f64) {
        let s0 = k as f64 * dt;
        let mut a = 0.0;
        let mut b = 0.0;
        for (idx, c) in self.coeffs.iter().enumerate() {
            let m = idx + 1;
            let q = c * self.rect.dphi_y_at_side(m, side);
            let rate = self.lambda - self.rect.decay_x(n) - self.rect.decay_y(m);
            let x = rate * dt;
            let e0 = (rate * s0).exp();
            // i0 = int_0^dt e^{rate s} ds, i1 = int_0^dt e^{rate s} (s/dt) ds.
            let (i0, i1) = if x.abs() < 1e-6 {
                (
                    dt * (1.0 + 0.5 * x + x * x / 6.0),
                    dt * (0.5 + x / 3.0 + 0.125 * x * x),
                )
            } else {
                (
                    dt * x.exp_m1() / x,
                    dt * (x.exp() * (x - 1.0) + 1.0) / (x * x),
                )
            };
            a += q * e0 * (i0 - i1);
            b += q * e0 * i1;
        }
        (a, b)
    }

    /// Weight of the distributional `s = 0` slice: the kernel acts there as
    /// `w(xi) delta(x - theta)` with `w(xi) = sign * p(row, xi)`.
    pub fn s0_slice_value(&self, xi: f64) -> f64 {
        self.sign * self.closed.eval_unchecked(self.row_y, xi)
    }

    /// `partial_xi` of the slice weight at `xi = side * l`; the endpoint
    /// constant of the r-integral quadrature rule.
    pub fn s0_slice_dxi(&self, side: i8) -> f64 {
        let xi = side as f64 * self.rect.ly;
        self.sign * self.closed.xi_derivative(self.row_y, xi)
    }

    pub fn closed_form(&self) -> &ClosedFormKernel {
        &self.closed
    }
}

/// Precomputed boundary-trace values over (x-node, theta-node, s-node),
/// stored in separable factored form.
#[derive(Debug, Clone)]
pub struct BoundaryTraceTensor {
    pub kind: SeriesKind,
    pub side: i8,
    pub s_nodes: Vec<f64>,
    lambda: f64,
    lx: f64,
    /// `damp[[k, n-1]] = e^{-n^2 pi^2 s_k / 4L^2}`.
    damp: Array2<f64>,
    /// `mfac[k] = sum_m e^{-m^2 pi^2 s_k / 4l^2} c_m psi_m'(side l)`.
    mfac: Vec<f64>,
    /// `phi[[n-1, i]] = phi_n(x_i)` on the shared x/theta grid.
    phi: Array2<f64>,
}

pub fn precompute_trace_tensor(
    k: &SeriesKernel,
    nx_cells: usize,
    s_nodes: &[f64],
    side: i8,
    budget_bytes: usize,
) -> Result<BoundaryTraceTensor> {
    for &s in s_nodes {
        k.check_s(s)?;
    }
    let n = k.n_modes;
    let requested = 8 * (s_nodes.len() * (n + 1) + n * (nx_cells + 1));
    if requested > budget_bytes {
        return Err(Error::MemoryBudget {
            requested,
            budget: budget_bytes,
        });
    }
    let mut damp = Array2::zeros((s_nodes.len(), n));
    let mut mfac = vec![0.0; s_nodes.len()];
    for (ks, &s) in s_nodes.iter().enumerate() {
        for nn in 1..=n {
            damp[[ks, nn - 1]] = k.damp_x(nn, s);
        }
        mfac[ks] = k.yfactor_dxi(s, side);
    }
    let phi = crate::basis::phi_x_table(&k.rect, nx_cells, n);
    Ok(BoundaryTraceTensor {
        kind: k.kind,
        side,
        s_nodes: s_nodes.to_vec(),
        lambda: k.lambda,
        lx: k.rect.lx,
        damp,
        mfac,
        phi,
    })
}

impl BoundaryTraceTensor {
    /// Entry at (x-node i, theta-node j, s-node ks); combines the cached
    /// factors in the same order as `SeriesKernel::eval_xi_trace`.
    pub fn entry(&self, i: usize, j: usize, ks: usize) -> f64 {
        let s = self.s_nodes[ks];
        let mut xfac = 0.0;
        for n in 0..self.damp.ncols() {
            xfac += self.damp[[ks, n]] * self.phi[[n, i]] * self.phi[[n, j]];
        }
        (self.lambda * s).exp() / self.lx * xfac * self.mfac[ks]
    }
}

/// Interior finite-difference residual of the kernel PDE
/// `K_s = K_xixi + K_thetatheta + lambda K` at pseudo-random probes.
pub struct PdeResidualReport {
    pub residual_h: f64,
    pub residual_h2: f64,
    /// Estimated convergence order from halving the FD step.
    pub order: f64,
}

pub fn kernel_pde_residual(
    k: &SeriesKernel,
    n_probes: usize,
    s_window: (f64, f64),
    h: f64,
    seed: u64,
) -> Result<PdeResidualReport> {
    use rand::prelude::*;
    let (s_lo, s_hi) = s_window;
    if s_lo - h < k.s_min {
        return Err(Error::contract(
            "s-window minus FD step must stay at or above s_min".to_string(),
        ));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let lx = k.rect.lx;
    let ly = k.rect.ly;
    let margin = 2.0 * h;
    let mut probes = Vec::with_capacity(n_probes);
    for _ in 0..n_probes {
        probes.push((
            rng.gen_range(-lx + margin..lx - margin),
            rng.gen_range(-lx + margin..lx - margin),
            rng.gen_range(s_lo..s_hi),
            rng.gen_range(-ly + margin..ly - margin),
        ));
    }
    let resid = |step: f64| -> Result<f64> {
        let mut worst = 0.0f64;
        for &(x, th, s, xi) in &probes {
            let f = |xx, tt, ss, qq| k.eval(xx, tt, ss, qq);
            let center = f(x, th, s, xi)?;
            let ks = (f(x, th, s + step, xi)? - f(x, th, s - step, xi)?) / (2.0 * step);
            let kxx =
                (f(x, th, s, xi + step)? - 2.0 * center + f(x, th, s, xi - step)?) / (step * step);
            let ktt =
                (f(x, th + step, s, xi)? - 2.0 * center + f(x, th - step, s, xi)?) / (step * step);
            worst = worst.max((ks - kxx - ktt - k.lambda * center).abs());
        }
        Ok(worst)
    };
    let r1 = resid(h)?;
    let r2 = resid(0.5 * h)?;
    Ok(PdeResidualReport {
        residual_h: r1,
        residual_h2: r2,
        order: (r1 / r2).log2(),
    })
}

/// Weak delta-limit check (the distributional initial condition): for test
/// functions `f(theta)`, `g(xi)` and decreasing `s`, compares
/// `int int K(x,theta,s,xi) f g` against `f(x) * int w(xi) g(xi) dxi`,
/// where `w` is the kernel's `s = 0` slice weight.
pub struct WeakLimitReport {
    pub s_values: Vec<f64>,
    pub values: Vec<f64>,
    pub limit: f64,
    pub errors: Vec<f64>,
}

pub fn weak_limit_test(
    kind: SeriesKind,
    lambda: f64,
    rect: RectangleSpec,
    f_theta: &dyn Fn(f64) -> f64,
    g_xi: &dyn Fn(f64) -> f64,
    x: f64,
    s_seq: &[f64],
    tail_tol: f64,
) -> Result<WeakLimitReport> {
    if s_seq.is_empty() {
        return Ok(WeakLimitReport {
            s_values: vec![],
            values: vec![],
            limit: 0.0,
            errors: vec![],
        });
    }
    let s_min = s_seq.iter().cloned().fold(f64::INFINITY, f64::min);
    // One kernel truncated for the smallest s serves every larger s.
    let kernel = SeriesKernel::build(kind, lambda, rect, s_min, tail_tol)?;
    let f_modes: Vec<f64> = (1..=kernel.n_modes)
        .map(|n| {
            adaptive_simpson(&|t| rect.phi_x(n, t) * f_theta(t), -rect.lx, rect.lx, 1e-10, 4 * n + 8)
                .map(|v| v / rect.lx)
        })
        .collect::<Result<_>>()?;
    let g_modes: Vec<f64> = (1..=kernel.m_modes)
        .map(|m| {
            adaptive_simpson(&|t| rect.phi_y(m, t) * g_xi(t), -rect.ly, rect.ly, 1e-10, 4 * m + 8)
                .map(|v| v / rect.ly)
        })
        .collect::<Result<_>>()?;
    // Limit by direct quadrature of the closed-form slice weight.
    let limit = f_theta(x)
        * adaptive_simpson(
            &|xi| kernel.s0_slice_value(xi) * g_xi(xi),
            -rect.ly,
            rect.ly,
            1e-10,
            32,
        )?;
    let mut values = Vec::with_capacity(s_seq.len());
    let mut errors = Vec::with_capacity(s_seq.len());
    for &s in s_seq {
        // int int K f g = e^{lambda s} [sum_n e^{-n^2 a s} phi_n(x) f_n]
        //                            * [l sum_m e^{-m^2 b s} c_m g_m]
        let mut xsum = 0.0;
        for (n, fm) in f_modes.iter().enumerate() {
            xsum += kernel.damp_x(n + 1, s) * rect.phi_x(n + 1, x) * fm;
        }
        let mut ysum = 0.0;
        for (idx, c) in kernel.coeffs.iter().enumerate() {
            ysum += (-rect.decay_y(idx + 1) * s).exp() * c * g_modes[idx];
        }
        let v = (kernel.lambda * s).exp() * xsum * rect.ly * ysum;
        values.push(v);
        errors.push((v - limit).abs());
    }
    Ok(WeakLimitReport {
        s_values: s_seq.to_vec(),
        values,
        limit,
        errors,
    })
}
