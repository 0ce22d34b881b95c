//! Sine eigenfunction bases on the rectangle, Fourier analysis/synthesis,
//! and Parseval identities.
//!
//! The bases are `phi_n(x) = sin(n pi (x+L) / (2L))` in x and
//! `psi_m(y) = sin(m pi (y+l) / (2l))` in y. They are orthogonal with
//! `(1/L) int phi_n phi_n' = delta` (same in y with `1/l`), vanish at the
//! lateral boundaries, and diagonalize the Dirichlet Laplacian on the
//! rectangle with decay rates `n^2 pi^2 / (4L^2) + m^2 pi^2 / (4l^2)`.

use ndarray::Array2;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::field::{trapezoid_weights, Field2D};

/// The rectangle `[-L,L] x [-l,l]`, stored by half-widths.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RectangleSpec {
    /// Half-width in x (the paper's `L`).
    pub lx: f64,
    /// Half-width in y (the paper's `l`).
    pub ly: f64,
}

impl RectangleSpec {
    pub fn new(lx: f64, ly: f64) -> Result<Self> {
        if lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite() {
            Ok(RectangleSpec { lx, ly })
        } else {
            Err(Error::contract("rectangle half-widths must be positive"))
        }
    }

    pub fn same_as(&self, other: &RectangleSpec) -> bool {
        (self.lx - other.lx).abs() < 1e-14 && (self.ly - other.ly).abs() < 1e-14
    }

    /// x-direction eigenfunction. Exactly zero at `x = +-L`.
    pub fn phi_x(&self, n: usize, x: f64) -> f64 {
        if x.abs() >= self.lx {
            return 0.0;
        }
        (n as f64 * PI * (x + self.lx) / (2.0 * self.lx)).sin()
    }

    /// y-direction eigenfunction. Exactly zero at `y = +-l`.
    pub fn phi_y(&self, m: usize, y: f64) -> f64 {
        if y.abs() >= self.ly {
            return 0.0;
        }
        (m as f64 * PI * (y + self.ly) / (2.0 * self.ly)).sin()
    }

    /// Derivative of the y-eigenfunction.
    pub fn dphi_y(&self, m: usize, y: f64) -> f64 {
        let k = m as f64 * PI / (2.0 * self.ly);
        k * (k * (y + self.ly)).cos()
    }

    /// `phi_m'(side * l)`: `(m pi / 2l) * (-1)^m` on the `+l` side and
    /// `m pi / 2l` on the `-l` side, with the cosine resolved exactly.
    pub fn dphi_y_at_side(&self, m: usize, side: i8) -> f64 {
        let k = m as f64 * PI / (2.0 * self.ly);
        if side > 0 {
            if m % 2 == 0 {
                k
            } else {
                -k
            }
        } else {
            k
        }
    }

    /// Laplacian decay rate of the x-mode: `n^2 pi^2 / (4 L^2)`.
    pub fn decay_x(&self, n: usize) -> f64 {
        let np = n as f64 * PI;
        np * np / (4.0 * self.lx * self.lx)
    }

    /// Laplacian decay rate of the y-mode: `m^2 pi^2 / (4 l^2)`.
    pub fn decay_y(&self, m: usize) -> f64 {
        let mp = m as f64 * PI;
        mp * mp / (4.0 * self.ly * self.ly)
    }
}

/// Checked evaluation per the operation contract (`-L <= x <= L`).
pub fn eval_phi_x(n: usize, x: f64, rect: &RectangleSpec) -> Result<f64> {
    if n == 0 {
        return Err(Error::contract("mode index must be >= 1"));
    }
    if x < -rect.lx || x > rect.lx {
        return Err(Error::contract(format!("x={x} outside [-{0},{0}]", rect.lx)));
    }
    Ok(rect.phi_x(n, x))
}

/// Checked evaluation per the operation contract (`-l <= y <= l`).
pub fn eval_phi_y(m: usize, y: f64, rect: &RectangleSpec) -> Result<f64> {
    if m == 0 {
        return Err(Error::contract("mode index must be >= 1"));
    }
    if y < -rect.ly || y > rect.ly {
        return Err(Error::contract(format!("y={y} outside [-{0},{0}]", rect.ly)));
    }
    Ok(rect.phi_y(m, y))
}

/// Truncated Fourier coefficients `a_{n,m}` of a field, rows indexed by n
/// (from 1), columns by m (from 1).
#[derive(Debug, Clone)]
pub struct CoefficientGrid {
    pub values: Array2<f64>,
    pub rect: RectangleSpec,
}

impl CoefficientGrid {
    pub fn n_modes(&self) -> usize {
        self.values.nrows()
    }

    pub fn m_modes(&self) -> usize {
        self.values.ncols()
    }

    /// Coefficient for 1-based mode indices.
    pub fn coeff(&self, n: usize, m: usize) -> f64 {
        self.values[[n - 1, m - 1]]
    }
}

fn check_trunc(modes: usize, cells: usize, axis: &str) -> Result<()> {
    if modes == 0 {
        return Err(Error::contract(format!("{axis} truncation must be >= 1")));
    }
    let limit = cells / 2;
    if modes > limit {
        return Err(Error::NyquistExceeded {
            requested: modes,
            limit,
        });
    }
    Ok(())
}

/// Table `phi[n-1][i] = phi_n(x_i)` on the grid nodes.
pub fn phi_x_table(rect: &RectangleSpec, nx_cells: usize, n_modes: usize) -> Array2<f64> {
    let dx = 2.0 * rect.lx / nx_cells as f64;
    let mut t = Array2::zeros((n_modes, nx_cells + 1));
    for n in 1..=n_modes {
        for i in 0..=nx_cells {
            t[[n - 1, i]] = rect.phi_x(n, -rect.lx + i as f64 * dx);
        }
    }
    t
}

pub fn phi_y_table(rect: &RectangleSpec, ny_cells: usize, m_modes: usize) -> Array2<f64> {
    let dy = 2.0 * rect.ly / ny_cells as f64;
    let mut t = Array2::zeros((m_modes, ny_cells + 1));
    for m in 1..=m_modes {
        for j in 0..=ny_cells {
            t[[m - 1, j]] = rect.phi_y(m, -rect.ly + j as f64 * dy);
        }
    }
    t
}

/// Fourier analysis by composite trapezoid on the field's own grid:
/// `a_{n,m} = (1/(L l)) int int f phi_n psi_m`.
pub fn analyze_field(f: &Field2D, n_modes: usize, m_modes: usize) -> Result<CoefficientGrid> {
    check_trunc(n_modes, f.nx_cells(), "x")?;
    check_trunc(m_modes, f.ny_cells(), "y")?;
    let (nx, ny) = (f.nx_cells(), f.ny_cells());
    let wx = trapezoid_weights(nx, f.dx());
    let wy = trapezoid_weights(ny, f.dy());
    let px = phi_x_table(&f.rect, nx, n_modes);
    let py = phi_y_table(&f.rect, ny, m_modes);

    // Contract y first, then x.
    let mut partial = Array2::zeros((nx + 1, m_modes));
    for i in 0..=nx {
        for m in 0..m_modes {
            let mut acc = 0.0;
            for j in 0..=ny {
                acc += wy[j] * f.values[[i, j]] * py[[m, j]];
            }
            partial[[i, m]] = acc;
        }
    }
    let scale = 1.0 / (f.rect.lx * f.rect.ly);
    let mut coeffs = Array2::zeros((n_modes, m_modes));
    for n in 0..n_modes {
        for m in 0..m_modes {
            let mut acc = 0.0;
            for i in 0..=nx {
                acc += wx[i] * px[[n, i]] * partial[[i, m]];
            }
            coeffs[[n, m]] = scale * acc;
        }
    }
    Ok(CoefficientGrid {
        values: coeffs,
        rect: f.rect,
    })
}

/// Pointwise truncated double sum `f = sum a_{n,m} phi_n psi_m`.
pub fn synthesize_field(c: &CoefficientGrid, nx_cells: usize, ny_cells: usize) -> Field2D {
    let px = phi_x_table(&c.rect, nx_cells, c.n_modes());
    let py = phi_y_table(&c.rect, ny_cells, c.m_modes());
    let mut out = Field2D::zeros(c.rect, nx_cells, ny_cells);
    for i in 0..=nx_cells {
        for j in 0..=ny_cells {
            let mut acc = 0.0;
            for n in 0..c.n_modes() {
                let mut inner = 0.0;
                for m in 0..c.m_modes() {
                    inner += c.values[[n, m]] * py[[m, j]];
                }
                acc += px[[n, i]] * inner;
            }
            out.values[[i, j]] = acc;
        }
    }
    out
}

/// Both sides of the Parseval identity `||f||^2 = L l sum a_{n,m}^2`,
/// the left side by trapezoid quadrature of `f^2`.
pub fn parseval_check(f: &Field2D, n_modes: usize, m_modes: usize) -> Result<(f64, f64)> {
    let c = analyze_field(f, n_modes, m_modes)?;
    let wx = trapezoid_weights(f.nx_cells(), f.dx());
    let wy = trapezoid_weights(f.ny_cells(), f.dy());
    let mut lhs = 0.0;
    for i in 0..=f.nx_cells() {
        for j in 0..=f.ny_cells() {
            lhs += wx[i] * wy[j] * f.values[[i, j]] * f.values[[i, j]];
        }
    }
    let mut sum_sq = 0.0;
    for v in c.values.iter() {
        sum_sq += v * v;
    }
    Ok((lhs, f.rect.lx * f.rect.ly * sum_sq))
}

/// Per-column projections onto the x-modes: `g_n(col) = (1/L) int phi_n g(., col)`.
/// Used for actuator states and boundary input rows.
pub fn project_x_modes(
    values: ndarray::ArrayView2<f64>,
    lx: f64,
    n_modes: usize,
) -> Array2<f64> {
    let nx = values.nrows() - 1;
    let dx = 2.0 * lx / nx as f64;
    let wx = trapezoid_weights(nx, dx);
    let rect = RectangleSpec { lx, ly: 1.0 };
    let px = phi_x_table(&rect, nx, n_modes);
    let cols = values.ncols();
    let mut out = Array2::zeros((n_modes, cols));
    for n in 0..n_modes {
        for k in 0..cols {
            let mut acc = 0.0;
            for i in 0..=nx {
                acc += wx[i] * px[[n, i]] * values[[i, k]];
            }
            out[[n, k]] = acc / lx;
        }
    }
    out
}
