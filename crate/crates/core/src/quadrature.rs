//! Quadrature rules on the reference triangle and on intervals.

use crate::error::{Error, Result};

/// Symmetric rule on a triangle: barycentric points and weights summing to 1
/// (multiply by the triangle area).
#[derive(Clone, Debug)]
pub struct TriangleRule {
    pub degree: usize,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl TriangleRule {
    /// Dunavant rules exact for polynomials of the given degree (4 or 5).
    pub fn new(degree: usize) -> Result<Self> {
        match degree {
            4 => {
                let (a, wa) = (0.445_948_490_915_965, 0.223_381_589_678_011);
                let (b, wb) = (0.091_576_213_509_771, 0.109_951_743_655_322);
                let mut points = Vec::new();
                let mut weights = Vec::new();
                for (p, w) in [(a, wa), (b, wb)] {
                    let q = 1.0 - 2.0 * p;
                    points.extend([[q, p, p], [p, q, p], [p, p, q]]);
                    weights.extend([w; 3]);
                }
                Ok(Self { degree, points, weights })
            }
            5 => {
                let (a, wa) = (0.470_142_064_105_115, 0.132_394_152_788_506);
                let (b, wb) = (0.101_286_507_323_456, 0.125_939_180_544_827);
                let third = 1.0 / 3.0;
                let mut points = vec![[third, third, third]];
                let mut weights = vec![0.225];
                for (p, w) in [(a, wa), (b, wb)] {
                    let q = 1.0 - 2.0 * p;
                    points.extend([[q, p, p], [p, q, p], [p, p, q]]);
                    weights.extend([w; 3]);
                }
                Ok(Self { degree, points, weights })
            }
            _ => Err(Error::Argument(format!(
                "no triangle quadrature of degree {degree} (supported: 4, 5)"
            ))),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Gauss-Legendre nodes and weights on `[0, 1]`, exact to degree `2n - 1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "at least one Gauss point required");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Newton iteration on P_n from the Chebyshev-like initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}
