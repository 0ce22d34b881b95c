//! Adaptive quadrature for the kernel coefficient integrals, independent of
//! the simulation grid.

use crate::error::{Error, Result};

/// Adaptive Simpson with Richardson acceptance, relative tolerance with an
/// absolute floor. `min_panels` forces an initial uniform split so that
/// oscillatory integrands are resolved before adaptivity kicks in.
pub fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    rel_tol: f64,
    min_panels: usize,
) -> Result<f64> {
    let panels = min_panels.max(4);
    let h = (b - a) / panels as f64;
    // First pass for a magnitude scale.
    let mut scale = 0.0f64;
    for i in 0..=panels {
        scale = scale.max(f(a + i as f64 * h).abs());
    }
    let abs_floor = (scale * (b - a)).max(1e-300) * rel_tol;
    let mut total = 0.0;
    for i in 0..panels {
        let x0 = a + i as f64 * h;
        let x1 = x0 + h;
        total += simpson_recurse(
            f,
            x0,
            x1,
            f(x0),
            f(x1),
            f(0.5 * (x0 + x1)),
            abs_floor / panels as f64,
            40,
        )?;
    }
    Ok(total)
}

#[allow(clippy::too_many_arguments)]
fn simpson_recurse(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fm: f64,
    tol: f64,
    depth: usize,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let h = b - a;
    let whole = h / 6.0 * (fa + 4.0 * fm + fb);
    let left = h / 12.0 * (fa + 4.0 * flm + fm);
    let right = h / 12.0 * (fm + 4.0 * frm + fb);
    let err = left + right - whole;
    if err.abs() <= 15.0 * tol {
        return Ok(left + right + err / 15.0);
    }
    if depth == 0 {
        return Err(Error::QuadratureNonConvergence(format!(
            "interval [{a}, {b}] did not converge (residual {err:e})"
        )));
    }
    Ok(
        simpson_recurse(f, a, m, fa, fm, flm, 0.5 * tol, depth - 1)?
            + simpson_recurse(f, m, b, fm, fb, frm, 0.5 * tol, depth - 1)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_exact() {
        let v = adaptive_simpson(&|x| x * x * x - 2.0 * x, -1.0, 2.0, 1e-12, 4).unwrap();
        // int x^3 - 2x on [-1,2] = (16-1)/4 - (4-1) = 0.75
        assert!((v - 0.75).abs() < 1e-12);
    }

    #[test]
    fn oscillatory() {
        let v = adaptive_simpson(&|x| (40.0 * x).sin(), 0.0, PI, 1e-11, 64).unwrap();
        let exact = (1.0 - (40.0 * PI).cos()) / 40.0;
        assert!((v - exact).abs() < 1e-10, "{v} vs {exact}");
    }
}
