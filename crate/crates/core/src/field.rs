//! Grid-sampled state containers: scalar fields on the rectangle
//! `[-L,L] x [-l,l]` and actuator states on `[-L,L] x [0,tau]`.

use ndarray::Array2;

use crate::basis::RectangleSpec;
use crate::error::{Error, Result};

/// Scalar field sampled on a uniform tensor grid over the rectangle,
/// boundary nodes included.
#[derive(Debug, Clone)]
pub struct Field2D {
    /// `values[[i, j]]` is the sample at `(x_i, y_j)`.
    pub values: Array2<f64>,
    pub rect: RectangleSpec,
}

impl Field2D {
    pub fn zeros(rect: RectangleSpec, nx_cells: usize, ny_cells: usize) -> Self {
        Field2D {
            values: Array2::zeros((nx_cells + 1, ny_cells + 1)),
            rect,
        }
    }

    pub fn from_fn(
        rect: RectangleSpec,
        nx_cells: usize,
        ny_cells: usize,
        f: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let mut out = Self::zeros(rect, nx_cells, ny_cells);
        for i in 0..=nx_cells {
            let x = out.x(i);
            for j in 0..=ny_cells {
                out.values[[i, j]] = f(x, out.y(j));
            }
        }
        out
    }

    pub fn nx_cells(&self) -> usize {
        self.values.nrows() - 1
    }

    pub fn ny_cells(&self) -> usize {
        self.values.ncols() - 1
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.rect.lx / self.nx_cells() as f64
    }

    pub fn dy(&self) -> f64 {
        2.0 * self.rect.ly / self.ny_cells() as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        -self.rect.lx + i as f64 * self.dx()
    }

    pub fn y(&self, j: usize) -> f64 {
        -self.rect.ly + j as f64 * self.dy()
    }

    /// Index of the node `-y_j` (grids are symmetric about 0).
    pub fn mirror_y(&self, j: usize) -> usize {
        self.ny_cells() - j
    }

    pub fn same_grid(&self, other: &Field2D) -> bool {
        self.values.dim() == other.values.dim() && self.rect.same_as(&other.rect)
    }

    pub fn check_same_grid(&self, other: &Field2D, what: &str) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(what.to_string()))
        }
    }
}

/// Actuator state on `D2 = [-L,L] x [0,tau]`, s-grid inclusive of both ends.
#[derive(Debug, Clone)]
pub struct DelayField {
    /// `values[[i, k]]` is the sample at `(x_i, s_k)`.
    pub values: Array2<f64>,
    /// Half-width of the x-extent (the rectangle's `L`).
    pub lx: f64,
    pub tau: f64,
}

impl DelayField {
    pub fn zeros(lx: f64, tau: f64, nx_cells: usize, ns_cells: usize) -> Self {
        DelayField {
            values: Array2::zeros((nx_cells + 1, ns_cells + 1)),
            lx,
            tau,
        }
    }

    pub fn from_fn(
        lx: f64,
        tau: f64,
        nx_cells: usize,
        ns_cells: usize,
        f: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let mut out = Self::zeros(lx, tau, nx_cells, ns_cells);
        for i in 0..=nx_cells {
            let x = out.x(i);
            for k in 0..=ns_cells {
                out.values[[i, k]] = f(x, out.s(k));
            }
        }
        out
    }

    pub fn nx_cells(&self) -> usize {
        self.values.nrows() - 1
    }

    pub fn ns_cells(&self) -> usize {
        self.values.ncols() - 1
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.lx / self.nx_cells() as f64
    }

    pub fn ds(&self) -> f64 {
        self.tau / self.ns_cells() as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        -self.lx + i as f64 * self.dx()
    }

    pub fn s(&self, k: usize) -> f64 {
        k as f64 * self.ds()
    }

    pub fn same_grid(&self, other: &DelayField) -> bool {
        self.values.dim() == other.values.dim()
            && (self.lx - other.lx).abs() < 1e-14
            && (self.tau - other.tau).abs() < 1e-14
    }

    pub fn check_same_grid(&self, other: &DelayField, what: &str) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(what.to_string()))
        }
    }
}

/// Composite-trapezoid weights on a uniform grid with `n_cells` cells.
pub fn trapezoid_weights(n_cells: usize, spacing: f64) -> Vec<f64> {
    let mut w = vec![spacing; n_cells + 1];
    w[0] = 0.5 * spacing;
    w[n_cells] = 0.5 * spacing;
    w
}
