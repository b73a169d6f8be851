//! Dense univariate polynomials in `f64` with ascending coefficients.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poly {
    coeffs: Vec<f64>,
}

impl Poly {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Self { coeffs }
    }

    pub fn constant(c: f64) -> Self {
        Self { coeffs: vec![c] }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Index of the highest nonzero coefficient (0 for the zero polynomial).
    pub fn degree(&self) -> usize {
        self.coeffs.iter().rposition(|&c| c != 0.0).unwrap_or(0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Poly {
        if self.coeffs.len() <= 1 {
            return Poly::constant(0.0);
        }
        Poly::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, &c)| c * i as f64)
                .collect(),
        )
    }

    pub fn scale(&self, factor: f64) -> Poly {
        Poly::new(self.coeffs.iter().map(|c| c * factor).collect())
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.coeffs.len().max(other.coeffs.len());
        Poly::new(
            (0..n)
                .map(|i| {
                    self.coeffs.get(i).copied().unwrap_or(0.0)
                        + other.coeffs.get(i).copied().unwrap_or(0.0)
                })
                .collect(),
        )
    }

    /// Coefficients of `x -> p(x + a)`.
    pub fn shift(&self, a: f64) -> Poly {
        // Horner-style synthetic division, repeated.
        let mut c = self.coeffs.clone();
        let n = c.len();
        for i in 0..n {
            for j in (i..n - 1).rev() {
                c[j] += a * c[j + 1];
            }
        }
        Poly::new(c)
    }

    /// Coefficients of `u -> p(w - u)`.
    pub fn reflect(&self, w: f64) -> Poly {
        let shifted = self.shift(w);
        Poly::new(
            shifted
                .coeffs
                .iter()
                .enumerate()
                .map(|(i, &c)| if i % 2 == 0 { c } else { -c })
                .collect(),
        )
    }

    /// Points in the open interval `(lo, hi)` where the polynomial changes
    /// sign, in increasing order. Roots of even multiplicity are skipped.
    pub fn sign_changes_in(&self, lo: f64, hi: f64) -> Vec<f64> {
        let deg = self.degree();
        let c = &self.coeffs;
        let mut roots = match deg {
            0 => Vec::new(),
            1 => vec![-c[0] / c[1]],
            2 => quadratic_sign_changes(c[0], c[1], c[2]),
            _ => {
                let mut knots = vec![lo];
                knots.extend(self.derivative().sign_changes_in(lo, hi));
                knots.push(hi);
                let mut out = Vec::new();
                for w in knots.windows(2) {
                    let (a, b) = (w[0], w[1]);
                    let (fa, fb) = (self.eval(a), self.eval(b));
                    if fa == 0.0 && a > lo {
                        out.push(a);
                    } else if fa * fb < 0.0 {
                        out.push(bisect(|x| self.eval(x), a, b, 0.0));
                    }
                }
                out
            }
        };
        roots.retain(|&x| x > lo && x < hi);
        roots.sort_by(f64::total_cmp);
        roots.dedup();
        roots
    }
}

fn quadratic_sign_changes(c0: f64, c1: f64, c2: f64) -> Vec<f64> {
    let disc = c1 * c1 - 4.0 * c2 * c0;
    if disc <= 0.0 {
        return Vec::new();
    }
    let sq = disc.sqrt();
    let q = -0.5 * (c1 + c1.signum() * sq);
    if q == 0.0 {
        // c1 == 0 and c0 == 0 cannot happen with disc > 0 unless c0 * c2 < 0
        let r = (-c0 / c2).sqrt();
        return vec![-r, r];
    }
    vec![q / c2, c0 / q]
}

/// Solves `f(x) = target` on `[a, b]` for a monotone `f` bracketing `target`.
/// Returns the endpoint closest in value when the bracket is degenerate.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, target: f64) -> f64 {
    let mut fa = f(a) - target;
    let fb = f(b) - target;
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 {
        return b;
    }
    if fa * fb > 0.0 {
        return if fa.abs() <= fb.abs() { a } else { b };
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let fm = f(mid) - target;
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}
