//! Time stepping of the plant/delay cascade (open- or closed-loop) and of the
//! autonomous target system, plus an exact spectral oracle for the
//! homogeneous-boundary heat phase.
//!
//! The diffusion step is a Peaceman–Rachford alternating-direction sweep with
//! the reaction term split half per sweep; the implicit/explicit weighting is
//! configurable through `theta_w` (0.5 = Crank–Nicolson class, unconditionally
//! stable for `theta_w >= 0.5`).  The delay channels advance by an exact
//! characteristic shift, which requires the s-spacing to equal the time step.

use std::time::Instant;

use serde::Serialize;

use crate::analysis::{norm_h1_delay, norm_l2_field};
use crate::basis::{analyze_field, synthesize_field, RectangleSpec};
use crate::controller::{ControlHistory, ControllerGains};
use crate::error::{Error, Result};
use crate::field::{trapezoid_weights, DelayField, Field2D};
use crate::transforms::EndpointRule;

/// Relative blow-up threshold: a run is declared divergent when the plant norm
/// exceeds this multiple of its initial value.
pub const DIVERGENCE_FACTOR: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SimMode {
    OpenLoop,
    ClosedLoop,
    TargetOnly,
}

/// Discretization and run parameters.
#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    pub lambda: f64,
    pub tau: f64,
    pub rect: RectangleSpec,
    pub nx: usize,
    pub ny: usize,
    pub ns: usize,
    pub dt: f64,
    pub t_end: f64,
    /// Implicit weight of each sweep; 0.5 ..= 1.0.
    pub theta_w: f64,
    pub n_modes: usize,
    pub m_modes: usize,
    pub mode: SimMode,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("lambda must be positive".into()));
        }
        if !(self.tau > 0.0 && self.dt > 0.0 && self.t_end >= 0.0) {
            return Err(Error::Config("tau, dt must be positive, t_end >= 0".into()));
        }
        if !(0.5..=1.0).contains(&self.theta_w) {
            return Err(Error::Config("theta_w must lie in [0.5, 1]".into()));
        }
        if self.nx < 4 || self.ny < 4 || self.ns < 1 {
            return Err(Error::Config("grid too coarse (need nx, ny >= 4, ns >= 1)".into()));
        }
        let ds = self.tau / self.ns as f64;
        if (ds - self.dt).abs() > 1e-9 * self.dt.max(1.0) {
            return Err(Error::Config(format!(
                "transport spacing tau/ns = {ds} must equal dt = {} for the exact shift",
                self.dt
            )));
        }
        let steps = self.tau / self.dt;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::Config("dt must divide tau exactly".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// Per-step norm series and run metadata.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub times: Vec<f64>,
    pub norm_u: Vec<f64>,
    pub norm_v1: Vec<f64>,
    pub norm_v2: Vec<f64>,
    pub u1_l2: Vec<f64>,
    pub u2_l2: Vec<f64>,
    /// Time at which the divergence cutoff tripped, if it did.
    pub diverged_at: Option<f64>,
    pub wall_secs: f64,
}

/// Final state and trajectory artifacts of one run.
pub struct SimOutput {
    pub record: RunRecord,
    pub u: Field2D,
    pub v1: DelayField,
    pub v2: DelayField,
    /// (t, state) pairs captured every `snap_every` steps (always includes t = 0).
    pub snapshots: Vec<(f64, Field2D)>,
}

/// Solve a constant-coefficient tridiagonal system in place.
///
/// `scratch` must have the same length as `rhs`.
fn thomas_const(sub: f64, diag: f64, sup: f64, rhs: &mut [f64], scratch: &mut [f64]) {
    let n = rhs.len();
    debug_assert!(n >= 1 && scratch.len() == n);
    scratch[0] = sup / diag;
    rhs[0] /= diag;
    for i in 1..n {
        let m = diag - sub * scratch[i - 1];
        scratch[i] = sup / m;
        rhs[i] = (rhs[i] - sub * rhs[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}

/// One alternating-direction step of u_t = Δu + λu with zero Dirichlet data at
/// x = ±L and the supplied rows at y = ±l (applied at the new time level).
pub fn step_diffusion(
    u: &Field2D,
    bc_top: &[f64],
    bc_bottom: &[f64],
    lambda: f64,
    dt: f64,
    theta_w: f64,
) -> Result<Field2D> {
    let nx = u.nx_cells();
    let ny = u.ny_cells();
    if bc_top.len() != nx + 1 || bc_bottom.len() != nx + 1 {
        return Err(Error::GridMismatch("boundary row length mismatch".into()));
    }
    let cx = 1.0 / (u.dx() * u.dx());
    let cy = 1.0 / (u.dy() * u.dy());
    let half = 0.5 * lambda;
    let th = theta_w;
    let ex = (1.0 - th) * dt;

    // Sweep 1: implicit in x, explicit in y (with half the reaction each).
    let mut star = Field2D::zeros(u.rect, nx, ny);
    let mut rhs = vec![0.0; nx - 1];
    let mut scratch = vec![0.0; nx - 1];
    let diag_x = 1.0 + 2.0 * th * dt * cx - th * dt * half;
    let off_x = -th * dt * cx;
    for j in 1..ny {
        for i in 1..nx {
            let lap_y = cy
                * (u.values[[i, j - 1]] - 2.0 * u.values[[i, j]] + u.values[[i, j + 1]]);
            rhs[i - 1] = u.values[[i, j]] + ex * (lap_y + half * u.values[[i, j]]);
        }
        thomas_const(off_x, diag_x, off_x, &mut rhs, &mut scratch);
        for i in 1..nx {
            star.values[[i, j]] = rhs[i - 1];
        }
    }

    // Sweep 2: implicit in y with the Dirichlet rows at the new level,
    // explicit in x on the intermediate state.
    let mut out = Field2D::zeros(u.rect, nx, ny);
    let mut rhs_y = vec![0.0; ny - 1];
    let mut scratch_y = vec![0.0; ny - 1];
    let diag_y = 1.0 + 2.0 * th * dt * cy - th * dt * half;
    let off_y = -th * dt * cy;
    for i in 1..nx {
        for j in 1..ny {
            let lap_x = cx
                * (star.values[[i - 1, j]] - 2.0 * star.values[[i, j]]
                    + star.values[[i + 1, j]]);
            rhs_y[j - 1] = star.values[[i, j]] + ex * (lap_x + half * star.values[[i, j]]);
        }
        rhs_y[0] += th * dt * cy * bc_bottom[i];
        rhs_y[ny - 2] += th * dt * cy * bc_top[i];
        thomas_const(off_y, diag_y, off_y, &mut rhs_y, &mut scratch_y);
        for j in 1..ny {
            out.values[[i, j]] = rhs_y[j - 1];
        }
    }
    for i in 1..nx {
        out.values[[i, 0]] = bc_bottom[i];
        out.values[[i, ny]] = bc_top[i];
    }
    // x = ±L columns stay identically zero (corners included).
    Ok(out)
}

/// Exact characteristic shift of a delay channel: v(·, s, t+dt) = v(·, s+dt, t),
/// with the supplied row entering at s = τ.
pub fn step_transport(v: &mut DelayField, new_input_row: &[f64]) -> Result<()> {
    let nx = v.nx_cells();
    let ns = v.ns_cells();
    if new_input_row.len() != nx + 1 {
        return Err(Error::GridMismatch("input row length mismatch".into()));
    }
    for i in 0..=nx {
        for k in 0..ns {
            v.values[[i, k]] = v.values[[i, k + 1]];
        }
        v.values[[i, ns]] = new_input_row[i];
    }
    Ok(())
}

/// L² norm of a boundary input row over x ∈ [−L, L].
fn row_l2(row: &[f64], dx: f64) -> f64 {
    let w = trapezoid_weights(row.len() - 1, dx);
    row.iter()
        .zip(&w)
        .map(|(v, wi)| wi * v * v)
        .sum::<f64>()
        .sqrt()
}

fn check_state_grids(
    cfg: &SimConfig,
    u0: &Field2D,
    v10: &DelayField,
    v20: &DelayField,
) -> Result<()> {
    if u0.nx_cells() != cfg.nx || u0.ny_cells() != cfg.ny || !u0.rect.same_as(&cfg.rect) {
        return Err(Error::GridMismatch("plant state grid does not match config".into()));
    }
    for (name, v) in [("v1", v10), ("v2", v20)] {
        if v.nx_cells() != cfg.nx
            || v.ns_cells() != cfg.ns
            || (v.tau - cfg.tau).abs() > 1e-12
            || (v.lx - cfg.rect.lx).abs() > 1e-12
        {
            return Err(Error::GridMismatch(format!(
                "delay channel {name} grid does not match config"
            )));
        }
    }
    Ok(())
}

/// Compatibility conditions on the initial data: zero plant state at x = ±L
/// and matching traces u0(x, ±l) = v_i0(x, 0).
pub fn check_compatibility(u0: &Field2D, v10: &DelayField, v20: &DelayField) -> Result<()> {
    let nx = u0.nx_cells();
    let ny = u0.ny_cells();
    let tol = 1e-9;
    for j in 0..=ny {
        if u0.values[[0, j]].abs() > tol || u0.values[[nx, j]].abs() > tol {
            return Err(Error::contract(
                "initial plant state must vanish at x = ±L",
            ));
        }
    }
    for i in 0..=nx {
        if (u0.values[[i, ny]] - v10.values[[i, 0]]).abs() > tol
            || (u0.values[[i, 0]] - v20.values[[i, 0]]).abs() > tol
        {
            return Err(Error::contract(
                "initial traces u0(x, ±l) must match the delay channels at s = 0",
            ));
        }
    }
    Ok(())
}

/// Inner loop shared by all run modes.  `control` produces the two boundary
/// input rows entering the delay channels at the current time (`None` = zero
/// input) and may maintain its own history state.
fn run_loop(
    cfg: &SimConfig,
    u0: &Field2D,
    v10: &DelayField,
    v20: &DelayField,
    reaction: f64,
    mut control: impl FnMut(&Field2D) -> Result<Option<(Vec<f64>, Vec<f64>)>>,
    snap_every: usize,
) -> Result<SimOutput> {
    cfg.validate()?;
    check_state_grids(cfg, u0, v10, v20)?;
    let start = Instant::now();
    let n_steps = cfg.n_steps();
    let mut u = u0.clone();
    let mut v1 = v10.clone();
    let mut v2 = v20.clone();
    let dx = u.dx();
    let norm0 = norm_l2_field(&u).max(1e-300);
    let mut record = RunRecord {
        times: Vec::with_capacity(n_steps + 1),
        norm_u: Vec::with_capacity(n_steps + 1),
        norm_v1: Vec::with_capacity(n_steps + 1),
        norm_v2: Vec::with_capacity(n_steps + 1),
        u1_l2: Vec::with_capacity(n_steps + 1),
        u2_l2: Vec::with_capacity(n_steps + 1),
        diverged_at: None,
        wall_secs: 0.0,
    };
    let mut snapshots = Vec::new();
    let zero_row = vec![0.0; cfg.nx + 1];
    for step in 0..=n_steps {
        let t = step as f64 * cfg.dt;
        let inputs = control(&u)?;
        let (u1_row, u2_row) = match &inputs {
            Some((a, b)) => (a.as_slice(), b.as_slice()),
            None => (zero_row.as_slice(), zero_row.as_slice()),
        };
        let nu = norm_l2_field(&u);
        record.times.push(t);
        record.norm_u.push(nu);
        record.norm_v1.push(norm_h1_delay(&v1));
        record.norm_v2.push(norm_h1_delay(&v2));
        record.u1_l2.push(row_l2(u1_row, dx));
        record.u2_l2.push(row_l2(u2_row, dx));
        if snap_every > 0 && step % snap_every == 0 {
            snapshots.push((t, u.clone()));
        }
        if !nu.is_finite() || nu > DIVERGENCE_FACTOR * norm0 {
            record.diverged_at = Some(t);
            break;
        }
        if step == n_steps {
            break;
        }
        step_transport(&mut v1, u1_row)?;
        step_transport(&mut v2, u2_row)?;
        // Dirichlet data for the *new* time level: v(x, 0, t+dt) = v(x, dt, t),
        // i.e. column 1 of the just-shifted state.  Reading column 0 here
        // would make an injected input reach the boundary after tau + dt
        // instead of tau, and that one-step-stale neutral loop is exactly
        // what the delay-compensating feedback cannot cancel.
        let bc_top: Vec<f64> = (0..=cfg.nx).map(|i| v1.values[[i, 1]]).collect();
        let bc_bottom: Vec<f64> = (0..=cfg.nx).map(|i| v2.values[[i, 1]]).collect();
        u = step_diffusion(&u, &bc_top, &bc_bottom, reaction, cfg.dt, cfg.theta_w)?;
    }
    record.wall_secs = start.elapsed().as_secs_f64();
    Ok(SimOutput {
        record,
        u,
        v1,
        v2,
        snapshots,
    })
}

/// Closed-loop run with the spectral feedback controller.
pub fn run_closed_loop(
    cfg: &SimConfig,
    u0: &Field2D,
    v10: &DelayField,
    v20: &DelayField,
    gains: &ControllerGains,
    rule: EndpointRule,
    snap_every: usize,
) -> Result<SimOutput> {
    check_compatibility(u0, v10, v20)?;
    let mut hist = ControlHistory::from_initial(v10, v20, gains.n_modes)?;
    run_loop(
        cfg,
        u0,
        v10,
        v20,
        cfg.lambda,
        |u| {
            let (u1, u2) = gains.compute_u(u, &hist, rule)?;
            hist.push(&u1, &u2)?;
            Ok(Some((u1, u2)))
        },
        snap_every,
    )
}

/// Uncontrolled run: zero boundary inputs, initial delay contents still flush.
pub fn run_open_loop(
    cfg: &SimConfig,
    u0: &Field2D,
    v10: &DelayField,
    v20: &DelayField,
    snap_every: usize,
) -> Result<SimOutput> {
    run_loop(cfg, u0, v10, v20, cfg.lambda, |_| Ok(None), snap_every)
}

/// Target-system run: reaction term absent, delay channels autonomous with
/// zero input at s = τ.
pub fn run_target(
    cfg: &SimConfig,
    w0: &Field2D,
    z10: &DelayField,
    z20: &DelayField,
    snap_every: usize,
) -> Result<SimOutput> {
    run_loop(cfg, w0, z10, z20, 0.0, |_| Ok(None), snap_every)
}

/// Exact solution of the homogeneous-Dirichlet heat equation: analyze the
/// state, damp each (n, m) coefficient by its eigenvalue, synthesize.
pub fn spectral_heat_oracle(w_at_t0: &Field2D, elapsed: f64) -> Result<Field2D> {
    if elapsed < 0.0 {
        return Err(Error::contract("elapsed time must be nonnegative"));
    }
    let nx = w_at_t0.nx_cells();
    let ny = w_at_t0.ny_cells();
    let tol = 1e-9;
    for j in 0..=ny {
        if w_at_t0.values[[0, j]].abs() > tol || w_at_t0.values[[nx, j]].abs() > tol {
            return Err(Error::contract("oracle input must vanish at x = ±L"));
        }
    }
    for i in 0..=nx {
        if w_at_t0.values[[i, 0]].abs() > tol || w_at_t0.values[[i, ny]].abs() > tol {
            return Err(Error::contract("oracle input must vanish at y = ±l"));
        }
    }
    let n_modes = (nx / 2).max(1);
    let m_modes = (ny / 2).max(1);
    let mut coeffs = analyze_field(w_at_t0, n_modes, m_modes)?;
    let rect = w_at_t0.rect;
    for n in 1..=n_modes {
        for m in 1..=m_modes {
            coeffs.values[[n - 1, m - 1]] *=
                (-(rect.decay_x(n) + rect.decay_y(m)) * elapsed).exp();
        }
    }
    Ok(synthesize_field(&coeffs, nx, ny))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{SeriesKernel, SeriesKind};
    use approx::assert_relative_eq;

    fn rect() -> RectangleSpec {
        RectangleSpec::new(1.0, 1.0).unwrap()
    }

    fn cfg(nx: usize, ny: usize, dt: f64, t_end: f64, mode: SimMode) -> SimConfig {
        SimConfig {
            lambda: 7.0,
            tau: 1.0,
            rect: rect(),
            nx,
            ny,
            ns: (1.0 / dt).round() as usize,
            dt,
            t_end,
            theta_w: 0.5,
            n_modes: 8,
            m_modes: 8,
            mode,
        }
    }

    #[test]
    fn config_validation_rejects_bad_spacing() {
        let mut c = cfg(20, 20, 0.01, 0.1, SimMode::OpenLoop);
        c.ns = 50; // tau/ns = 0.02 != dt
        assert!(c.validate().is_err());
        let mut c2 = cfg(20, 20, 0.01, 0.1, SimMode::OpenLoop);
        c2.theta_w = 0.3;
        assert!(c2.validate().is_err());
    }

    #[test]
    fn zero_state_stays_zero() {
        let u = Field2D::zeros(rect(), 20, 20);
        let bc = vec![0.0; 21];
        let out = step_diffusion(&u, &bc, &bc, 7.0, 0.01, 0.5).unwrap();
        assert!(out.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_mode_amplification_matches_oracles() {
        let nx = 100;
        let ny = 100;
        let dt = 0.01;
        let lambda = 7.0;
        let u = Field2D::from_fn(rect(), nx, ny, |x, y| {
            rect().phi_x(1, x) * rect().phi_y(1, y)
        });
        let bc = vec![0.0; nx + 1];
        let out = step_diffusion(&u, &bc, &bc, lambda, dt, 0.5).unwrap();
        let measured = out.values[[nx / 2, ny / 2]] / u.values[[nx / 2, ny / 2]];

        // Exact amplification of the scheme for the discrete (1,1) mode.
        let dx = u.dx();
        let pi = std::f64::consts::PI;
        let eig = |h: f64| -4.0 / (h * h) * (pi * h / 4.0).sin().powi(2);
        let mu_x = 0.5 * lambda + eig(dx);
        let mu_y = 0.5 * lambda + eig(u.dy());
        let th = 0.5;
        let exact_discrete = (1.0 + (1.0 - th) * dt * mu_y) / (1.0 - th * dt * mu_x)
            * (1.0 + (1.0 - th) * dt * mu_x)
            / (1.0 - th * dt * mu_y);
        assert_relative_eq!(measured, exact_discrete, epsilon = 1e-12);

        // Continuum rate e^{(λ−π²/2)dt} recovered within O(dt²) + O(h²).
        let exact_pde = ((lambda - pi * pi / 2.0) * dt).exp();
        assert_relative_eq!(measured, exact_pde, max_relative = 2e-5);
    }

    #[test]
    fn transport_shift_is_exact_and_flushes() {
        let nx = 10;
        let ns = 20;
        let mut v = DelayField::zeros(1.0, 1.0, nx, ns);
        // Delta-like column at s-index 7.
        for i in 0..=nx {
            v.values[[i, 7]] = (i as f64).sin();
        }
        let snapshot = v.clone();
        let zero = vec![0.0; nx + 1];
        step_transport(&mut v, &zero).unwrap();
        for i in 0..=nx {
            assert_eq!(v.values[[i, 6]], snapshot.values[[i, 7]]);
        }
        for _ in 0..ns {
            step_transport(&mut v, &zero).unwrap();
        }
        assert!(v.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mild_solution_identity_under_zero_input() {
        let nx = 12;
        let ns = 25;
        let tau = 1.0;
        let v0 = DelayField::from_fn(1.0, tau, nx, ns, |x, s| (3.0 * x + s).cos());
        let mut v = v0.clone();
        let zero = vec![0.0; nx + 1];
        let steps = 9;
        for _ in 0..steps {
            step_transport(&mut v, &zero).unwrap();
        }
        let t = steps as f64 * v.ds();
        for i in 0..=nx {
            for k in 0..=ns {
                let s = v.s(k);
                let expect = if s + t <= tau + 1e-12 {
                    v0.values[[i, k + steps]]
                } else {
                    0.0
                };
                assert_eq!(v.values[[i, k]], expect, "mismatch at ({i},{k})");
            }
        }
    }

    #[test]
    fn target_phase_norm_non_increasing_at_large_dt() {
        let mut u = Field2D::from_fn(rect(), 30, 30, |x, y| {
            rect().phi_x(1, x) * rect().phi_y(1, y) + 0.3 * rect().phi_x(3, x) * rect().phi_y(2, y)
        });
        let bc = vec![0.0; 31];
        let mut prev = norm_l2_field(&u);
        for _ in 0..20 {
            u = step_diffusion(&u, &bc, &bc, 0.0, 0.1, 0.5).unwrap();
            let n = norm_l2_field(&u);
            assert!(n <= prev * (1.0 + 1e-12), "norm grew in target phase");
            prev = n;
        }
    }

    #[test]
    fn spectral_oracle_identity_and_single_mode() {
        let w = Field2D::from_fn(rect(), 40, 40, |x, y| {
            rect().phi_x(1, x) * rect().phi_y(1, y)
        });
        let same = spectral_heat_oracle(&w, 0.0).unwrap();
        for (a, b) in same.values.iter().zip(w.values.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        let later = spectral_heat_oracle(&w, 1.0).unwrap();
        let factor = (-std::f64::consts::PI.powi(2) / 2.0).exp();
        assert_relative_eq!(
            later.values[[20, 20]],
            factor * w.values[[20, 20]],
            max_relative = 1e-10
        );
        // Nonzero lateral boundary data is rejected.
        let bad = Field2D::from_fn(rect(), 40, 40, |_, y| 1.0 + 0.0 * y);
        assert!(spectral_heat_oracle(&bad, 0.5).is_err());
    }

    #[test]
    fn run_target_matches_spectral_oracle() {
        let nx = 50;
        let dt = 0.01;
        let c = cfg(nx, nx, dt, 0.5, SimMode::TargetOnly);
        let w0 = Field2D::from_fn(rect(), nx, nx, |x, y| {
            rect().phi_x(1, x) * rect().phi_y(1, y) + 0.5 * rect().phi_x(2, x) * rect().phi_y(3, y)
        });
        let z = DelayField::zeros(1.0, 1.0, nx, c.ns);
        let out = run_target(&c, &w0, &z, &z, 0).unwrap();
        let oracle = spectral_heat_oracle(&w0, 0.5).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, b) in out.u.values.iter().zip(oracle.values.iter()) {
            num += (a - b) * (a - b);
            den += b * b;
        }
        let rel = (num / den).sqrt();
        assert!(rel < 1e-2, "target run deviates from oracle: rel = {rel}");
        assert!(out.record.diverged_at.is_none());
    }

    #[test]
    fn open_loop_grows_and_trips_divergence_cutoff_eventually() {
        let nx = 40;
        let c = cfg(nx, nx, 0.01, 2.0, SimMode::OpenLoop);
        let u0 = Field2D::from_fn(rect(), nx, nx, |x, y| {
            rect().phi_x(1, x) * rect().phi_y(1, y)
        });
        let v = DelayField::zeros(1.0, 1.0, nx, c.ns);
        let out = run_open_loop(&c, &u0, &v, &v, 0).unwrap();
        let first = out.record.norm_u[0];
        let last = *out.record.norm_u.last().unwrap();
        // λ = 7 > π²/2: exponential growth.
        assert!(last > 10.0 * first, "open loop failed to grow");
    }

    #[test]
    fn closed_loop_runs_and_decays_on_coarse_grid() {
        let nx = 40;
        let dt = 0.02;
        let mut c = cfg(nx, nx, dt, 3.0, SimMode::ClosedLoop);
        c.ns = 50;
        let lambda = c.lambda;
        let g1 = SeriesKernel::build(SeriesKind::Gamma1, lambda, rect(), dt, 1e-10).unwrap();
        let g2 = SeriesKernel::build(SeriesKind::Gamma2, lambda, rect(), dt, 1e-10).unwrap();
        let gains = ControllerGains::new(&g1, &g2, nx, nx, c.tau, dt).unwrap();
        // Initial state compatible with zero delay channels: vanishes on all edges.
        let u0 = Field2D::from_fn(rect(), nx, nx, |x, y| {
            rect().phi_x(1, x) * rect().phi_y(1, y) + 0.4 * rect().phi_x(2, x) * rect().phi_y(2, y)
        });
        let v = DelayField::zeros(1.0, 1.0, nx, c.ns);
        let out =
            run_closed_loop(&c, &u0, &v, &v, &gains, EndpointRule::Collapsed, 0).unwrap();
        assert!(out.record.diverged_at.is_none());
        let first = out.record.norm_u[0];
        let last = *out.record.norm_u.last().unwrap();
        assert!(
            last < 0.2 * first,
            "closed loop failed to decay: {last} vs {first}"
        );
    }

    #[test]
    fn compatibility_validation_rejects_mismatched_traces() {
        let nx = 20;
        let u0 = Field2D::from_fn(rect(), nx, nx, |x, y| {
            rect().phi_x(1, x) * (1.0 + y)
        });
        let v = DelayField::zeros(1.0, 1.0, nx, 10);
        assert!(check_compatibility(&u0, &v, &v).is_err());
    }
}
