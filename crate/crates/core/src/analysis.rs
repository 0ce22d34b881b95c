//! Norms, Lyapunov functionals, exponential-rate fitting, and numerical
//! verification of the boundedness inequalities used in the stability proof.
//!
//! Norm conventions: the plant state lives on the rectangle and is measured in
//! L²; each delay channel is measured in H¹ over (x, s), where the seminorm
//! part uses centered differences in the interior and one-sided differences at
//! the edges.  The inequality checks are evaluated in coefficient space, where
//! the corresponding proofs operate (Parseval), with a dense-quadrature
//! cross-check at tiny truncations exercised in the unit tests.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::basis::RectangleSpec;
use crate::error::{Error, Result};
use crate::field::{trapezoid_weights, DelayField, Field2D};
use crate::kernels::{compute_pm_coeffs, ClosedFormKernel, ClosedKind, SeriesKernel, SeriesKind};
use crate::quad::adaptive_simpson;
use crate::transforms::m_to_w;

/// L² norm of a rectangle field by 2-D trapezoid quadrature.
pub fn norm_l2_field(f: &Field2D) -> f64 {
    let wx = trapezoid_weights(f.nx_cells(), f.dx());
    let wy = trapezoid_weights(f.ny_cells(), f.dy());
    let mut acc = 0.0;
    for i in 0..=f.nx_cells() {
        for j in 0..=f.ny_cells() {
            let v = f.values[[i, j]];
            acc += wx[i] * wy[j] * v * v;
        }
    }
    acc.sqrt()
}

/// L² norm of a delay-channel field by 2-D trapezoid quadrature.
pub fn norm_l2_delay(g: &DelayField) -> f64 {
    weighted_sq_delay(g, 0.0, false).sqrt()
}

/// H¹ norm of a delay-channel field: ∫∫ g² + g_x² + g_s² dx ds.
///
/// Derivatives use centered differences in the interior and one-sided
/// differences at the edges.
pub fn norm_h1_delay(g: &DelayField) -> f64 {
    weighted_sq_delay(g, 0.0, true).sqrt()
}

/// Squared (optionally H¹) norm of `g` with exponential weight e^{b·s}.
///
/// With `b = 0` and `h1 = false` this is the plain squared L² norm.
fn weighted_sq_delay(g: &DelayField, b: f64, h1: bool) -> f64 {
    let nx = g.nx_cells();
    let ns = g.ns_cells();
    let dx = g.dx();
    let ds = g.ds();
    let wx = trapezoid_weights(nx, dx);
    let ws = trapezoid_weights(ns, ds);
    let mut acc = 0.0;
    for i in 0..=nx {
        for k in 0..=ns {
            let v = g.values[[i, k]];
            let mut density = v * v;
            if h1 {
                let gx = if i == 0 {
                    (g.values[[1, k]] - g.values[[0, k]]) / dx
                } else if i == nx {
                    (g.values[[nx, k]] - g.values[[nx - 1, k]]) / dx
                } else {
                    (g.values[[i + 1, k]] - g.values[[i - 1, k]]) / (2.0 * dx)
                };
                let gs = if k == 0 {
                    (g.values[[i, 1]] - g.values[[i, 0]]) / ds
                } else if k == ns {
                    (g.values[[i, ns]] - g.values[[i, ns - 1]]) / ds
                } else {
                    (g.values[[i, k + 1]] - g.values[[i, k - 1]]) / (2.0 * ds)
                };
                density += gx * gx + gs * gs;
            }
            acc += wx[i] * ws[k] * (b * g.s(k)).exp() * density;
        }
    }
    acc
}

/// Weight and splitting constants of the dissipation estimate.
#[derive(Debug, Clone, Serialize)]
pub struct LyapunovParams {
    /// Exponential weight b > 0 of the delay-channel integrals in V1.
    pub b: f64,
    /// Splitting constants μ1..μ4 (all positive).
    pub mu: [f64; 4],
}

impl LyapunovParams {
    /// Defaults: b = 1, μ1 = μ2 = 0.5, μ3 = μ4 = 3·l.
    pub fn defaults(rect: &RectangleSpec) -> Self {
        LyapunovParams {
            b: 1.0,
            mu: [0.5, 0.5, 3.0 * rect.ly, 3.0 * rect.ly],
        }
    }

    /// Positivity of b and all μ_i (required for the functionals themselves).
    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::contract("Lyapunov weight b must be positive"));
        }
        if self.mu.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::contract(
                "Lyapunov splitting constants mu must be positive",
            ));
        }
        Ok(())
    }

    /// Whether the strict dissipation-certificate constraints hold:
    /// (2−μ1−μ2)/(4L²) + 1/(2l²) − μ3 − μ4 > 0 and μ_i > 8l/(3) for all i.
    ///
    /// Note: these two families of constraints are mutually exclusive for
    /// l ≳ 0.455 (μ3 + μ4 > 16l/3 forces the first expression negative), so on
    /// the default unit rectangle no parameter choice satisfies both.  The
    /// sandwich constants α4 = 1/4 and β4 = 3 + e^{bτ} do not depend on μ, and
    /// monotone decay of V1 along target trajectories is checked empirically
    /// instead of through this certificate.
    pub fn dissipation_certificate(&self, rect: &RectangleSpec) -> bool {
        let lx = rect.lx;
        let ly = rect.ly;
        let margin =
            (2.0 - self.mu[0] - self.mu[1]) / (4.0 * lx * lx) + 1.0 / (2.0 * ly * ly)
                - self.mu[2]
                - self.mu[3];
        let trace_ok = self.mu.iter().all(|&m| 1.0 - 8.0 * ly / (3.0 * m) > 0.0);
        margin > 0.0 && trace_ok
    }

    /// Lower sandwich constant α4 with α4·V2 ≤ V1.
    pub fn alpha4(&self) -> f64 {
        0.25
    }

    /// Upper sandwich constant β4 with V1 ≤ β4·V2.
    pub fn beta4(&self, tau: f64) -> f64 {
        3.0 + (self.b * tau).exp()
    }
}

/// Weighted Lyapunov functional
/// V1 = ‖m‖² + Σᵢ ∫∫ e^{bs} (zᵢ² + (∂ₓzᵢ)² + (∂ₛzᵢ)²).
pub fn lyapunov_v1(
    m: &Field2D,
    z1: &DelayField,
    z2: &DelayField,
    p: &LyapunovParams,
) -> Result<f64> {
    p.validate()?;
    let n = norm_l2_field(m);
    Ok(n * n + weighted_sq_delay(z1, p.b, true) + weighted_sq_delay(z2, p.b, true))
}

/// Unweighted functional V2 = ‖w‖² + Σᵢ ∫∫ zᵢ² + (∂ₓzᵢ)² + (∂ₛzᵢ)².
pub fn lyapunov_v2(w: &Field2D, z1: &DelayField, z2: &DelayField) -> f64 {
    let n = norm_l2_field(w);
    n * n + weighted_sq_delay(z1, 0.0, true) + weighted_sq_delay(z2, 0.0, true)
}

/// Exponential fit of a norm time series: series ≈ α̂·e^{−β̂·t} on a window.
#[derive(Debug, Clone, Serialize)]
pub struct RateFit {
    pub t_start: f64,
    pub t_end: f64,
    /// Fitted decay rate; negative values mean growth.
    pub beta_hat: f64,
    pub alpha_hat: f64,
    /// RMS residual of the log-linear least-squares fit.
    pub rms_residual: f64,
    pub n_points: usize,
}

/// Least-squares fit of log(values) over times in [t_start, t_end].
pub fn fit_decay_rate(
    times: &[f64],
    values: &[f64],
    t_start: f64,
    t_end: f64,
) -> Result<RateFit> {
    if times.len() != values.len() {
        return Err(Error::contract("times and values must have equal length"));
    }
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for (&t, &v) in times.iter().zip(values) {
        if t >= t_start - 1e-12 && t <= t_end + 1e-12 {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::contract(format!(
                    "nonpositive or nonfinite value {v} at t={t} in fit window"
                )));
            }
            ts.push(t);
            ys.push(v.ln());
        }
    }
    let n = ts.len();
    if n < 2 {
        return Err(Error::contract(
            "fit window must contain at least two samples",
        ));
    }
    let nf = n as f64;
    let mean_t = ts.iter().sum::<f64>() / nf;
    let mean_y = ys.iter().sum::<f64>() / nf;
    let mut stt = 0.0;
    let mut sty = 0.0;
    for (&t, &y) in ts.iter().zip(&ys) {
        stt += (t - mean_t) * (t - mean_t);
        sty += (t - mean_t) * (y - mean_y);
    }
    if stt <= 0.0 {
        return Err(Error::contract("degenerate time window in rate fit"));
    }
    let slope = sty / stt;
    let intercept = mean_y - slope * mean_t;
    let mut res = 0.0;
    for (&t, &y) in ts.iter().zip(&ys) {
        let r = y - (slope * t + intercept);
        res += r * r;
    }
    Ok(RateFit {
        t_start,
        t_end,
        beta_hat: -slope,
        alpha_hat: intercept.exp(),
        rms_residual: (res / nf).sqrt(),
        n_points: n,
    })
}

/// Which boundedness statement to verify numerically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LemmaId {
    /// Volume-operator bound: ∫∫|∫∫γ1·f|² ds dx ≤ A1‖f‖² with
    /// A1 = τ·e^{2λτ}·‖p(l,·)‖².
    VolumeOperatorBound,
    /// s = 0 boundary-trace identity: the slice operator multiplies g by the
    /// endpoint constant, so LHS = p_ξ(l,l)²·‖g‖² exactly (ratio 1).
    TraceSliceEquality,
}

impl LemmaId {
    pub fn name(self) -> &'static str {
        match self {
            LemmaId::VolumeOperatorBound => "volume-operator-bound",
            LemmaId::TraceSliceEquality => "trace-slice-equality",
        }
    }
}

/// Result of a randomized inequality check.
#[derive(Debug, Clone, Serialize)]
pub struct InequalityReport {
    pub lemma: String,
    pub trials: usize,
    /// Bound constant on the right-hand side (A1 or the squared endpoint slope).
    pub bound_constant: f64,
    pub max_ratio: f64,
    pub mean_ratio: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Exact ∫_0^τ e^{c·s} ds, stable near c = 0.
fn exp_integral(c: f64, tau: f64) -> f64 {
    if c.abs() < 1e-12 {
        tau * (1.0 + 0.5 * c * tau)
    } else {
        (c * tau).exp_m1() / c
    }
}

/// Coefficient-space left-hand side of the volume-operator bound for one
/// random coefficient grid `a` (n_modes × m_modes), using exact s-integrals.
fn volume_bound_lhs(
    a: &Array2<f64>,
    pm: &[f64],
    lambda: f64,
    tau: f64,
    rect: &RectangleSpec,
) -> f64 {
    let (n_modes, m_modes) = a.dim();
    let mut acc = 0.0;
    for n in 1..=n_modes {
        for m in 1..=m_modes {
            for mp in 1..=m_modes {
                let c = 2.0 * (lambda - rect.decay_x(n))
                    - rect.decay_y(m)
                    - rect.decay_y(mp);
                acc += pm[m - 1]
                    * pm[mp - 1]
                    * a[[n - 1, m - 1]]
                    * a[[n - 1, mp - 1]]
                    * exp_integral(c, tau);
            }
        }
    }
    rect.lx * rect.ly * rect.ly * acc
}

/// L² norm squared of p(l,·) over [−l, l] by adaptive quadrature.
pub fn p_row_norm_sq(lambda: f64, rect: &RectangleSpec) -> Result<f64> {
    let p = ClosedFormKernel::new(ClosedKind::P, lambda, *rect)?;
    let l = rect.ly;
    adaptive_simpson(
        &|xi| {
            let v = p.eval_unchecked(l, xi);
            v * v
        },
        -l,
        l,
        1e-12,
        16,
    )
}

/// Randomized verification of one boundedness statement.
///
/// Left-hand sides are evaluated in coefficient space with exact s-integrals
/// (band-limited random inputs make this representation exact); the bounds use
/// the explicit proof constants.
pub fn verify_lemma_bound(
    lemma: LemmaId,
    lambda: f64,
    tau: f64,
    rect: &RectangleSpec,
    trials: usize,
    seed: u64,
) -> Result<InequalityReport> {
    if trials == 0 {
        return Err(Error::contract("trial count must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = 1e-3;
    match lemma {
        LemmaId::VolumeOperatorBound => {
            let n_modes = 16;
            let m_modes = 16;
            let p = ClosedFormKernel::new(ClosedKind::P, lambda, *rect)?;
            let pm = compute_pm_coeffs(&p, 1, m_modes)?;
            let a1 = tau * (2.0 * lambda * tau).exp() * p_row_norm_sq(lambda, rect)?;
            let mut max_ratio: f64 = 0.0;
            let mut sum_ratio = 0.0;
            for _ in 0..trials {
                let a = Array2::from_shape_fn((n_modes, m_modes), |_| {
                    rng.gen_range(-1.0..1.0)
                });
                let lhs = volume_bound_lhs(&a, &pm, lambda, tau, rect);
                let f_sq = rect.lx * rect.ly * a.iter().map(|v| v * v).sum::<f64>();
                let ratio = lhs / (a1 * f_sq);
                max_ratio = max_ratio.max(ratio);
                sum_ratio += ratio;
            }
            Ok(InequalityReport {
                lemma: lemma.name().to_string(),
                trials,
                bound_constant: a1,
                max_ratio,
                mean_ratio: sum_ratio / trials as f64,
                tolerance: tol,
                pass: max_ratio <= 1.0 + tol,
            })
        }
        LemmaId::TraceSliceEquality => {
            // The s = 0 slice of the ξ-derivative of the first feedback kernel
            // acts as (endpoint slope)·δ(x−θ), so the operator multiplies g by
            // a constant and the squared norms cancel in the ratio.  The two
            // routes for the constant: the power-series evaluation inside the
            // kernel object versus the analytic endpoint value
            // −λ/4 + λ²l²/8 obtained from the regular-part expansion.
            let gamma1 = SeriesKernel::build(SeriesKind::Gamma1, lambda, *rect, 0.01, 1e-10)?;
            let series_const = gamma1.s0_slice_dxi(1);
            let l = rect.ly;
            let analytic = -lambda / 4.0 + lambda * lambda * l * l / 8.0;
            let m4 = analytic * analytic;
            let tol_eq = 1e-6;
            let nx = 64;
            let ns = 64;
            let wx = trapezoid_weights(nx, 2.0 * rect.lx / nx as f64);
            let ws = trapezoid_weights(ns, tau / ns as f64);
            let mut max_ratio: f64 = 0.0;
            let mut sum_ratio = 0.0;
            for _ in 0..trials {
                // Band-limited random g(x,s): low x-modes, smooth s-profiles.
                let coeffs: Vec<(f64, f64)> =
                    (0..6).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(0.5..3.0))).collect();
                let mut lhs = 0.0;
                let mut g_sq = 0.0;
                for i in 0..=nx {
                    let x = -rect.lx + 2.0 * rect.lx * i as f64 / nx as f64;
                    for k in 0..=ns {
                        let s = tau * k as f64 / ns as f64;
                        let mut g = 0.0;
                        for (n, &(c, om)) in coeffs.iter().enumerate() {
                            g += c * rect.phi_x(n + 1, x) * (om * s).cos();
                        }
                        let w = wx[i] * ws[k];
                        g_sq += w * g * g;
                        let tg = series_const * g;
                        lhs += w * tg * tg;
                    }
                }
                let ratio = lhs / (m4 * g_sq);
                max_ratio = max_ratio.max(ratio);
                sum_ratio += ratio;
            }
            let mean_ratio = sum_ratio / trials as f64;
            Ok(InequalityReport {
                lemma: lemma.name().to_string(),
                trials,
                bound_constant: m4,
                max_ratio,
                mean_ratio,
                tolerance: tol_eq,
                pass: (max_ratio - 1.0).abs() <= tol_eq && (mean_ratio - 1.0).abs() <= tol_eq,
            })
        }
    }
}

/// Random compatible target-system state (w, z1, z2):
/// w vanishes at x = ±L, matches zᵢ(·,0) on the lateral edges, and both delay
/// channels vanish at s = τ.
pub fn random_target_state(
    rect: &RectangleSpec,
    tau: f64,
    nx_cells: usize,
    ny_cells: usize,
    ns_cells: usize,
    rng: &mut impl Rng,
) -> Result<(Field2D, DelayField, DelayField)> {
    let n_modes = 4;
    let m_modes = 4;
    let s_modes = 3;
    let am = Array2::from_shape_fn((n_modes, m_modes), |_| rng.gen_range(-1.0f64..1.0));
    let c1 = Array2::from_shape_fn((n_modes, s_modes), |_| rng.gen_range(-1.0f64..1.0));
    let c2 = Array2::from_shape_fn((n_modes, s_modes), |_| rng.gen_range(-1.0f64..1.0));
    // Interior bubble: vanishes on all four edges.
    let m_field = Field2D::from_fn(*rect, nx_cells, ny_cells, |x, y| {
        let mut acc = 0.0;
        for n in 1..=n_modes {
            for m in 1..=m_modes {
                acc += am[[n - 1, m - 1]] * rect.phi_x(n, x) * rect.phi_y(m, y);
            }
        }
        acc
    });
    // cos((2j−1)πs/2τ) vanishes at s = τ, so zᵢ(x,τ) = 0 holds exactly.
    let mk_z = |c: &Array2<f64>| {
        DelayField::from_fn(rect.lx, tau, nx_cells, ns_cells, |x, s| {
            let mut acc = 0.0;
            for n in 1..=n_modes {
                for j in 1..=s_modes {
                    let om = (2.0 * j as f64 - 1.0) * std::f64::consts::PI / (2.0 * tau);
                    acc += c[[n - 1, j - 1]] * rect.phi_x(n, x) * (om * s).cos();
                }
            }
            acc
        })
    };
    let z1 = mk_z(&c1);
    let z2 = mk_z(&c2);
    let w = m_to_w(&m_field, &z1, &z2)?;
    Ok((w, z1, z2))
}
