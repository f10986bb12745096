//! Small numerical helpers shared across modules.

/// A point of the plane. One-dimensional data uses the first coordinate and
/// keeps the second at zero.
pub type Point = [f64; 2];

/// A 2x2 matrix stored row-major, `m[row][col]`. In one dimension only
/// `m[0][0]` is meaningful.
pub type Mat2 = [[f64; 2]; 2];

pub const IDENTITY: Mat2 = [[1.0, 0.0], [0.0, 1.0]];

const PAIRWISE_BLOCK: usize = 32;

/// Pairwise summation with a fixed recursion order.
///
/// Results depend only on the slice contents and their order, never on
/// thread scheduling.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_BLOCK {
        let mut s = 0.0;
        for v in values {
            s += v;
        }
        return s;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Numerically stable `ln(sum(exp(x)))`. Returns `-inf` for an empty or
/// all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let mut s = 0.0;
    for v in values {
        s += (v - max).exp();
    }
    max + s.ln()
}

pub fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

pub fn norm(v: &Point) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

pub fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn add(a: &Point, b: &Point) -> Point {
    [a[0] + b[0], a[1] + b[1]]
}

pub fn scale(a: &Point, s: f64) -> Point {
    [a[0] * s, a[1] * s]
}

pub fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn mat_vec(m: &Mat2, v: &Point) -> Point {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

pub fn transpose(m: &Mat2) -> Mat2 {
    [[m[0][0], m[1][0]], [m[0][1], m[1][1]]]
}

pub fn mat_sub(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] - b[0][0], a[0][1] - b[0][1]],
        [a[1][0] - b[1][0], a[1][1] - b[1][1]],
    ]
}

/// Determinant restricted to the leading `dim x dim` block.
pub fn det(m: &Mat2, dim: usize) -> f64 {
    if dim == 1 {
        m[0][0]
    } else {
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }
}

/// Inverse restricted to the leading `dim x dim` block; the unused block
/// stays the identity in one dimension.
pub fn inverse(m: &Mat2, dim: usize) -> Option<Mat2> {
    let d = det(m, dim);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    if dim == 1 {
        return Some([[1.0 / m[0][0], 0.0], [0.0, 1.0]]);
    }
    Some([[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]])
}

/// Frobenius norm of the leading `dim x dim` block.
pub fn frobenius(m: &Mat2, dim: usize) -> f64 {
    let mut s = 0.0;
    for row in m.iter().take(dim) {
        for v in row.iter().take(dim) {
            s += v * v;
        }
    }
    s.sqrt()
}

/// Spectral (operator 2-) norm of the leading `dim x dim` block.
pub fn spectral_norm(m: &Mat2, dim: usize) -> f64 {
    if dim == 1 {
        return m[0][0].abs();
    }
    // largest singular value from the eigenvalues of m^T m
    let mtm = mat_mul(&transpose(m), m);
    let tr = mtm[0][0] + mtm[1][1];
    let dt = mtm[0][0] * mtm[1][1] - mtm[0][1] * mtm[1][0];
    let disc = (tr * tr / 4.0 - dt).max(0.0).sqrt();
    (tr / 2.0 + disc).max(0.0).sqrt()
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}

/// Volume of the unit ball in dimension `dim` (2 for d = 1, pi for d = 2).
pub fn unit_ball_volume(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => std::f64::consts::PI,
        _ => panic!("unsupported dimension {dim}"),
    }
}

/// Format with 17 significant digits, the precision used by every export.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499500.0);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = [1000.0, 1000.0];
        assert!((log_sum_exp(&v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let m = [[3.0, 0.0], [0.0, -5.0]];
        assert!((spectral_norm(&m, 2) - 5.0).abs() < 1e-12);
        let r = [[0.0, -1.0], [1.0, 0.0]];
        assert!((spectral_norm(&r, 2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_round_trip() {
        let m = [[2.0, 1.0], [1.0, 3.0]];
        let inv = inverse(&m, 2).unwrap();
        let p = mat_mul(&m, &inv);
        for i in 0..2 {
            for j in 0..2 {
                assert!((p[i][j] - IDENTITY[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn fmt17_round_trips() {
        let v = std::f64::consts::PI / 7.0;
        let s = fmt17(v);
        assert_eq!(s.parse::<f64>().unwrap(), v);
    }
}
