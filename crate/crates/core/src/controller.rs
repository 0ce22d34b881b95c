//! Delay-compensated boundary feedback.
//!
//! The two lateral inputs are coupled through their own histories:
//!
//! ```text
//! U_i(x,t) = int int gamma_i(x,theta,tau,xi) u(theta,xi,t) dxi dtheta
//!   - int_0^tau int dgamma_i/dxi(x,theta,sigma,+l) U_1(theta,t-sigma) dtheta dsigma
//!   + int_0^tau int dgamma_i/dxi(x,theta,sigma,-l) U_2(theta,t-sigma) dtheta dsigma,
//! ```
//!
//! i.e. the input histories enter with the same orientation as in the affine
//! channel transform whose `s = tau` row this law enforces to vanish (see the
//! sign discussion in the transforms module: the opposite orientation fails
//! the cancellation identity and turns the history coupling into positive
//! feedback of integral mass ~ e^{lambda tau}).
//!
//! Everything is evaluated spectrally: the theta-integrals reduce to x-mode
//! coefficients of `u` and of each history row, so a control step costs
//! O(N (K + M) + N nx) instead of a dense O(nx^2 K) quadrature.
//!
//! The sigma-convolution uses product integration: the history is treated as
//! piecewise linear in time and each panel integral of the exponential trace
//! kernel is evaluated analytically per (n, m) mode.  This matters because
//! the boundary-derivative trace of the kernel concentrates like
//! `1/sqrt(sigma)` near `sigma = 0` (the kernel's diagonal trace does not
//! vanish at the lateral edge, so its sine series has a jump there); sampling
//! that profile with a trapezoid rule loses an O(sqrt(dt)) chunk of mass per
//! step, which then recirculates through the neutral history loop.  The
//! `sigma = 0` end of the first panel involves the *current* inputs; under
//! the collapsed endpoint rule this yields one 2x2 linear solve per x-mode.

use std::collections::VecDeque;

use ndarray::Array2;

use crate::basis::{analyze_field, phi_x_table, project_x_modes, RectangleSpec};
use crate::error::{Error, Result};
use crate::field::{DelayField, Field2D};
use crate::kernels::SeriesKernel;
use crate::transforms::EndpointRule;

/// Ring of past boundary-input rows covering exactly the last delay window,
/// with cached x-mode projections.
#[derive(Debug, Clone)]
pub struct ControlHistory {
    pub lx: f64,
    pub tau: f64,
    pub dt: f64,
    /// Window cells: tau / dt.
    pub k_steps: usize,
    n_modes: usize,
    /// Front = newest = U(t - dt); length k_steps + 1.
    rows1: VecDeque<Vec<f64>>,
    rows2: VecDeque<Vec<f64>>,
    modes1: VecDeque<Vec<f64>>,
    modes2: VecDeque<Vec<f64>>,
}

fn project_row(row: &[f64], lx: f64, n_modes: usize) -> Vec<f64> {
    let col = Array2::from_shape_vec((row.len(), 1), row.to_vec()).expect("row shape");
    let m = project_x_modes(col.view(), lx, n_modes);
    (0..n_modes).map(|n| m[[n, 0]]).collect()
}

impl ControlHistory {
    /// Initialize the window at t = 0 from the transport initial data:
    /// the input that *would* have produced `v_i0` is
    /// `U_i(x, -sigma) = v_i0(x, tau - sigma)`.
    pub fn from_initial(v10: &DelayField, v20: &DelayField, n_modes: usize) -> Result<Self> {
        if v10.nx_cells() != v20.nx_cells()
            || v10.ns_cells() != v20.ns_cells()
            || (v10.tau - v20.tau).abs() > 1e-14
        {
            return Err(Error::GridMismatch("initial channel grids differ".into()));
        }
        let k_steps = v10.ns_cells();
        let nx = v10.nx_cells();
        let mut h = ControlHistory {
            lx: v10.lx,
            tau: v10.tau,
            dt: v10.ds(),
            k_steps,
            n_modes,
            rows1: VecDeque::with_capacity(k_steps + 1),
            rows2: VecDeque::with_capacity(k_steps + 1),
            modes1: VecDeque::with_capacity(k_steps + 1),
            modes2: VecDeque::with_capacity(k_steps + 1),
        };
        for j in 0..=k_steps {
            // Age (j+1) dt maps to s-column ns - (j+1); the oldest slot
            // (age tau + dt) predates the data and reuses the s = 0 column.
            let col = k_steps.saturating_sub(j + 1);
            let r1: Vec<f64> = (0..=nx).map(|i| v10.values[[i, col]]).collect();
            let r2: Vec<f64> = (0..=nx).map(|i| v20.values[[i, col]]).collect();
            h.modes1.push_back(project_row(&r1, h.lx, n_modes));
            h.modes2.push_back(project_row(&r2, h.lx, n_modes));
            h.rows1.push_back(r1);
            h.rows2.push_back(r2);
        }
        Ok(h)
    }

    /// All-zero window (quiescent past).
    pub fn zeros(lx: f64, tau: f64, nx_cells: usize, k_steps: usize, n_modes: usize) -> Self {
        let v = DelayField::zeros(lx, tau, nx_cells, k_steps);
        Self::from_initial(&v, &v, n_modes).expect("consistent by construction")
    }

    /// Append the freshly computed inputs, dropping the expired rows.
    pub fn push(&mut self, u1: &[f64], u2: &[f64]) -> Result<()> {
        if u1.len() != self.rows1[0].len() || u2.len() != u1.len() {
            return Err(Error::GridMismatch("input row length mismatch".into()));
        }
        for v in u1.iter().chain(u2) {
            if !v.is_finite() {
                return Err(Error::contract("non-finite boundary input".to_string()));
            }
        }
        self.modes1.push_front(project_row(u1, self.lx, self.n_modes));
        self.modes2.push_front(project_row(u2, self.lx, self.n_modes));
        self.rows1.push_front(u1.to_vec());
        self.rows2.push_front(u2.to_vec());
        self.rows1.pop_back();
        self.rows2.pop_back();
        self.modes1.pop_back();
        self.modes2.pop_back();
        Ok(())
    }

    /// Input row of channel `i` at age `k` steps (k = 1..=k_steps).
    pub fn row(&self, i: usize, k: usize) -> &[f64] {
        match i {
            1 => &self.rows1[k - 1],
            _ => &self.rows2[k - 1],
        }
    }

    fn modes(&self, i: usize, k: usize) -> &[f64] {
        match i {
            1 => &self.modes1[k - 1],
            _ => &self.modes2[k - 1],
        }
    }
}

/// Precomputed spectral gains of the two control laws.
#[derive(Debug, Clone)]
pub struct ControllerGains {
    pub rect: RectangleSpec,
    pub tau: f64,
    pub dt: f64,
    pub k_steps: usize,
    pub n_modes: usize,
    pub m_modes: usize,
    /// Volume gains per (n, m), one per channel.
    vol: [Array2<f64>; 2],
    /// Product-integration weights per (n, age k), k = 0..=K: column k is the
    /// total quadrature weight multiplying the age-k history mode in the
    /// sigma-convolution of channel i against the +l (`tr_p`) or -l (`tr_m`)
    /// trace.  Column 0 multiplies the *current* input and is only active
    /// under the collapsed endpoint rule.
    tr_p: [Array2<f64>; 2],
    tr_m: [Array2<f64>; 2],
    /// Per-x-mode inverse of the 2x2 implicit endpoint system (collapsed).
    einv: Vec<[[f64; 2]; 2]>,
    /// phi_n on the boundary x-grid.
    px: Array2<f64>,
}

impl ControllerGains {
    pub fn new(
        gamma1: &SeriesKernel,
        gamma2: &SeriesKernel,
        nx_cells: usize,
        ny_cells: usize,
        tau: f64,
        dt: f64,
    ) -> Result<Self> {
        if !gamma1.rect.same_as(&gamma2.rect) {
            return Err(Error::GridMismatch("kernel rectangles differ".into()));
        }
        let steps = tau / dt;
        if (steps - steps.round()).abs() > 1e-9 || steps.round() < 1.0 {
            return Err(Error::Config(format!("dt={dt} must divide tau={tau} exactly")));
        }
        let k_steps = steps.round() as usize;
        let n_modes = gamma1.n_modes.min(gamma2.n_modes).min(nx_cells / 2);
        let m_modes = gamma1.m_modes.min(gamma2.m_modes).min(ny_cells / 2);
        let mut vol = [
            Array2::zeros((n_modes, m_modes)),
            Array2::zeros((n_modes, m_modes)),
        ];
        let mut tr_p: [Array2<f64>; 2] = [
            Array2::zeros((n_modes, k_steps + 1)),
            Array2::zeros((n_modes, k_steps + 1)),
        ];
        let mut tr_m = tr_p.clone();
        for (i, g) in [gamma1, gamma2].into_iter().enumerate() {
            for n in 1..=n_modes {
                for m in 1..=m_modes {
                    vol[i][[n - 1, m - 1]] = g.volume_mode_gain(n, m, tau);
                }
                // Panel [k dt, (k+1) dt] distributes onto ages k and k+1.
                for k in 0..k_steps {
                    let (ap, bp) = g.trace_panel_weights(n, 1, k, dt);
                    let (am, bm) = g.trace_panel_weights(n, -1, k, dt);
                    tr_p[i][[n - 1, k]] += ap;
                    tr_p[i][[n - 1, k + 1]] += bp;
                    tr_m[i][[n - 1, k]] += am;
                    tr_m[i][[n - 1, k + 1]] += bm;
                }
            }
        }
        // Collapsed sigma = 0 endpoint: the age-0 column couples the current
        // input modes g_i(n) through
        //   g_1 = b_1 - tr_p1[n,0] g_1 + tr_m1[n,0] g_2,  and likewise g_2,
        // so solve (I - M_n) [g_1 g_2]^T = [b_1 b_2]^T per mode.
        let mut einv = Vec::with_capacity(n_modes);
        for n in 0..n_modes {
            let m00 = 1.0 + tr_p[0][[n, 0]];
            let m01 = -tr_m[0][[n, 0]];
            let m10 = tr_p[1][[n, 0]];
            let m11 = 1.0 - tr_m[1][[n, 0]];
            let det = m00 * m11 - m01 * m10;
            if det.abs() < 1e-12 {
                return Err(Error::contract(
                    "singular implicit endpoint system; reduce dt".to_string(),
                ));
            }
            einv.push([[m11 / det, -m01 / det], [-m10 / det, m00 / det]]);
        }
        Ok(ControllerGains {
            rect: gamma1.rect,
            tau,
            dt,
            k_steps,
            n_modes,
            m_modes,
            vol,
            tr_p,
            tr_m,
            einv,
            px: phi_x_table(&gamma1.rect, nx_cells, n_modes),
        })
    }

    /// Evaluate both boundary inputs at the current time.
    pub fn compute_u(
        &self,
        u: &Field2D,
        hist: &ControlHistory,
        rule: EndpointRule,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if !u.rect.same_as(&self.rect) {
            return Err(Error::GridMismatch("field rectangle mismatch".into()));
        }
        if hist.k_steps != self.k_steps || (hist.dt - self.dt).abs() > 1e-14 {
            return Err(Error::GridMismatch(
                "history window inconsistent with gains".into(),
            ));
        }
        let nx = u.nx_cells();
        if self.px.ncols() != nx + 1 {
            return Err(Error::GridMismatch("x-grid mismatch".into()));
        }
        let coeffs = analyze_field(u, self.n_modes, self.m_modes)?;
        let mut bn = [vec![0.0f64; self.n_modes], vec![0.0f64; self.n_modes]];
        for i in 0..2 {
            for n in 0..self.n_modes {
                let mut acc = 0.0;
                for m in 1..=self.m_modes {
                    acc += self.vol[i][[n, m - 1]] * coeffs.coeff(n + 1, m);
                }
                // Product-integration weights over ages 1..=K; the age-0
                // column (current inputs) is resolved by the endpoint rule.
                for k in 1..=self.k_steps {
                    acc += self.tr_m[i][[n, k]] * hist.modes(2, k)[n]
                        - self.tr_p[i][[n, k]] * hist.modes(1, k)[n];
                }
                bn[i][n] = acc;
            }
        }
        let mut g = [vec![0.0f64; self.n_modes], vec![0.0f64; self.n_modes]];
        match rule {
            EndpointRule::Drop => g = bn,
            EndpointRule::Collapsed => {
                for n in 0..self.n_modes {
                    let e = &self.einv[n];
                    g[0][n] = e[0][0] * bn[0][n] + e[0][1] * bn[1][n];
                    g[1][n] = e[1][0] * bn[0][n] + e[1][1] * bn[1][n];
                }
            }
        }
        let mut u1 = vec![0.0f64; nx + 1];
        let mut u2 = vec![0.0f64; nx + 1];
        for j in 0..=nx {
            let (mut a1, mut a2) = (0.0, 0.0);
            for n in 0..self.n_modes {
                a1 += g[0][n] * self.px[[n, j]];
                a2 += g[1][n] * self.px[[n, j]];
            }
            u1[j] = a1;
            u2[j] = a2;
        }
        Ok((u1, u2))
    }

    /// Diagnostic: per-(n,m) magnitude of the volume gains of channel `i`.
    pub fn closed_loop_gain_spectrum(&self, i: usize) -> Array2<f64> {
        self.vol[i - 1].mapv(f64::abs)
    }
}
