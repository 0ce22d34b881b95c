//! First-order Bessel functions I1 and J1.
//!
//! Power series at moderate arguments (the kernels here never leave the
//! small-argument regime), large-argument asymptotic expansions beyond.

use std::f64::consts::PI;

/// Modified Bessel function of the first kind, order one.
pub fn bessel_i1(z: f64) -> f64 {
    let az = z.abs();
    if az == 0.0 {
        return 0.0;
    }
    // The all-positive series has no cancellation, so it stays accurate well
    // past the point where the asymptotic expansion takes over.
    let v = if az <= 18.0 {
        series_i1(az)
    } else {
        asymptotic_i1(az)
    };
    if z < 0.0 {
        -v
    } else {
        v
    }
}

/// Bessel function of the first kind, order one.
pub fn bessel_j1(z: f64) -> f64 {
    let az = z.abs();
    if az == 0.0 {
        return 0.0;
    }
    let v = if az <= 12.0 {
        series_j1(az)
    } else {
        asymptotic_j1(az)
    };
    if z < 0.0 {
        -v
    } else {
        v
    }
}

/// `I1(z) = (z/2) sum_k (z^2/4)^k / (k! (k+1)!)`.
fn series_i1(z: f64) -> f64 {
    let q = 0.25 * z * z;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k as f64 * (k + 1) as f64);
        sum += term;
        if term < 1e-17 * sum.abs() {
            break;
        }
    }
    0.5 * z * sum
}

/// `J1(z) = (z/2) sum_k (-z^2/4)^k / (k! (k+1)!)`.
fn series_j1(z: f64) -> f64 {
    let q = 0.25 * z * z;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= -q / (k as f64 * (k + 1) as f64);
        sum += term;
        if term.abs() < 1e-17 {
            break;
        }
    }
    0.5 * z * sum
}

fn asymptotic_i1(z: f64) -> f64 {
    // I1(z) ~ e^z / sqrt(2 pi z) * sum (-1)^k a_k(1) / z^k, mu = 4.
    let mu = 4.0;
    let mut sum = 1.0f64;
    let mut term = 1.0f64;
    for k in 1..20u32 {
        let kf = k as f64;
        term *= -(mu - (2.0 * kf - 1.0) * (2.0 * kf - 1.0)) / (8.0 * kf * z);
        if term.abs() > sum.abs() {
            break;
        }
        sum += term;
        if term.abs() < 1e-16 * sum.abs() {
            break;
        }
    }
    z.exp() / (2.0 * PI * z).sqrt() * sum
}

fn asymptotic_j1(z: f64) -> f64 {
    // Hankel expansion: J1(z) ~ sqrt(2/(pi z)) (P(z) cos(w) - Q(z) sin(w)),
    // w = z - 3 pi / 4, with a_j = prod_{i<=j} (mu - (2i-1)^2) / (j! 8^j),
    // P = sum (-1)^k a_{2k} z^{-2k}, Q = sum (-1)^k a_{2k+1} z^{-2k-1}.
    let mu = 4.0f64;
    let mut a = 1.0; // a_j / z^j, running
    let mut p = 1.0;
    let mut q = 0.0;
    let mut sign_p = -1.0;
    let mut sign_q = 1.0;
    for j in 1..16u32 {
        let jf = j as f64;
        a *= (mu - (2.0 * jf - 1.0) * (2.0 * jf - 1.0)) / (8.0 * jf * z);
        if a.abs() < 1e-17 {
            break;
        }
        if j % 2 == 1 {
            q += sign_q * a;
            sign_q = -sign_q;
        } else {
            p += sign_p * a;
            sign_p = -sign_p;
        }
    }
    let w = z - 0.75 * PI;
    (2.0 / (PI * z)).sqrt() * (p * w.cos() - q * w.sin())
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values (Abramowitz & Stegun / mpmath, 15 digits).
    #[test]
    fn i1_reference_values() {
        let cases = [
            (0.1, 0.050062526047092694),
            (0.5, 0.2578943053908963),
            (1.0, 0.565159103992485),
            (2.0, 1.590636854637329),
            (2.6457513110645907, 2.871805513466107), // sqrt(7)
            (5.0, 24.335642142450528),
            (8.0, 399.8731367825601),
            (11.0, 6948.858659812163),
            (12.5, 29345.74964207113),
            (15.0, 328124.9219702064),
            (20.0, 42454973.38512777),
            (30.0, 768532038938.957),
        ];
        for (z, want) in cases {
            let got = bessel_i1(z);
            assert!(
                ((got - want) / want).abs() < 1e-11,
                "I1({z}) = {got}, want {want}"
            );
        }
        assert_eq!(bessel_i1(0.0), 0.0);
        assert!((bessel_i1(-1.0) + bessel_i1(1.0)).abs() < 1e-16);
    }

    #[test]
    fn j1_reference_values() {
        let cases = [
            (0.1, 0.049937526036242),
            (0.5, 0.2422684576748739),
            (1.0, 0.4400505857449335),
            (2.0, 0.5767248077568734),
            (2.6457513110645907, 0.45780059807968915), // sqrt(7)
            (5.0, -0.32757913759146523),
            (8.0, 0.23463634685391463),
            (11.0, -0.17678529895672151),
            (12.5, -0.16548380461475973),
            (15.0, 0.20510403861352275),
            (20.0, 0.06683312417585005),
            (30.0, -0.11875106261662294),
        ];
        for (z, want) in cases {
            let got = bessel_j1(z);
            assert!(
                ((got - want) / want).abs() < 1e-9,
                "J1({z}) = {got}, want {want}"
            );
        }
        assert_eq!(bessel_j1(0.0), 0.0);
    }

    #[test]
    fn small_argument_limit() {
        // I1(z) ~ J1(z) ~ z/2 as z -> 0.
        for z in [1e-8, 1e-6, 1e-4] {
            assert!((bessel_i1(z) / (z / 2.0) - 1.0).abs() < 1e-8);
            assert!((bessel_j1(z) / (z / 2.0) - 1.0).abs() < 1e-8);
        }
    }
}
