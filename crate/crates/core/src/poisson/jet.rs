use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{Mat2, Point};

/// Condition number above which a jet fit is refused.
pub const FIT_CONDITION_CAP: f64 = 1e10;

/// Weighted least-squares fit of `a0 + b.x + x.A x / 2` with `A` symmetric
/// and trace-free (a harmonic polynomial of degree at most two) to samples
/// at offsets `pts` from the expansion point. Returns `(b, A)`.
///
/// On a disk, harmonic polynomials of different degree are orthogonal, so
/// for a harmonic input the fit returns its exact 2-jet up to sampling error.
pub fn fit_harmonic_jet(
    dim: usize,
    pts: &[Point],
    vals: &[f64],
    weights: &[f64],
    scale: f64,
) -> Result<(Point, Mat2)> {
    let k = if dim == 1 { 2 } else { 5 };
    let s = if scale > 0.0 { scale } else { 1.0 };
    let basis = |p: &Point| -> [f64; 5] {
        let (x, y) = (p[0] / s, p[1] / s);
        [1.0, x, y, 0.5 * (x * x - y * y), x * y]
    };
    let cols: [usize; 5] = if dim == 1 { [0, 1, 0, 0, 0] } else { [0, 1, 2, 3, 4] };
    let mut n = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for ((p, v), w) in pts.iter().zip(vals).zip(weights) {
        let f = basis(p);
        for a in 0..k {
            rhs[a] += w * f[cols[a]] * v;
            for b in 0..k {
                n[(a, b)] += w * f[cols[a]] * f[cols[b]];
            }
        }
    }
    let eig = n.clone().symmetric_eigen();
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e.abs())));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= FIT_CONDITION_CAP) {
        return Err(Error::FitDegenerate { condition });
    }
    let beta = n
        .cholesky()
        .ok_or(Error::FitDegenerate { condition })?
        .solve(&rhs);
    if dim == 1 {
        return Ok(([beta[1] / s, 0.0], [[0.0, 0.0], [0.0, 0.0]]));
    }
    let b = [beta[1] / s, beta[2] / s];
    let (a, e) = (beta[3] / (s * s), beta[4] / (s * s));
    Ok((b, [[a, e], [e, -a]]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk_samples(f: impl Fn(Point) -> f64) -> (Vec<Point>, Vec<f64>, Vec<f64>) {
        let mut p = Vec::new();
        for i in 0..6 {
            for j in 0..16 {
                let r = 0.05 + 0.08 * i as f64;
                let t = j as f64 * std::f64::consts::TAU / 16.0;
                p.push([r * t.cos(), r * t.sin()]);
            }
        }
        let v = p.iter().map(|&x| f(x)).collect();
        let w = p.iter().map(|x| (x[0] * x[0] + x[1] * x[1]).sqrt()).collect();
        (p, v, w)
    }

    #[test]
    fn linear_and_saddle_inputs() {
        let (p, v, w) = disk_samples(|x| 0.3 * x[0] - 0.7 * x[1] + 2.0);
        let (b, a) = fit_harmonic_jet(2, &p, &v, &w, 0.4).unwrap();
        assert!((b[0] - 0.3).abs() < 1e-12 && (b[1] + 0.7).abs() < 1e-12);
        assert!(a.iter().flatten().all(|x| x.abs() < 1e-12));

        let (p, v, w) = disk_samples(|x| x[0] * x[1]);
        let (b, a) = fit_harmonic_jet(2, &p, &v, &w, 0.4).unwrap();
        assert!(b[0].abs() < 1e-12 && b[1].abs() < 1e-12);
        assert!((a[0][1] - 1.0).abs() < 1e-12 && (a[1][0] - 1.0).abs() < 1e-12);
        assert!(a[0][0].abs() < 1e-12);
    }

    #[test]
    fn cubic_harmonic_has_no_two_jet() {
        // Re (x + iy)^3 = x^3 - 3 x y^2
        let (p, v, w) = disk_samples(|x| x[0].powi(3) - 3.0 * x[0] * x[1] * x[1]);
        let (b, a) = fit_harmonic_jet(2, &p, &v, &w, 0.4).unwrap();
        assert!(b[0].abs() < 1e-12 && b[1].abs() < 1e-12);
        assert!(a.iter().flatten().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn collinear_samples_are_degenerate() {
        let p: Vec<Point> = (0..10).map(|i| [0.1 * i as f64, 0.0]).collect();
        let v = vec![1.0; 10];
        let w = vec![1.0; 10];
        assert!(matches!(
            fit_harmonic_jet(2, &p, &v, &w, 1.0),
            Err(Error::FitDegenerate { .. })
        ));
    }
}
