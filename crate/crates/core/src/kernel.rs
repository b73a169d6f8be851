//! Smoothing kernel `g` and its vectorized forms on equidistant knot grids.
//!
//! `g` equals one left of `-1`, zero right of `1`, and a polynomial `p` of
//! degree at most `r + 1` in between, where `p(-1) = 1`, `p(1) = 0` and the
//! first `r` moments of `1_{(-inf, 0]} - g` vanish on `[-1, 1]`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// The polynomial part `p` of the smoothing function `g`.
#[derive(Debug, Clone)]
pub struct SmoothingPolynomial {
    r: usize,
    exact: Vec<BigRational>,
    coeffs: Vec<f64>,
}

impl SmoothingPolynomial {
    /// Solves the `(r + 2)`-equation moment system exactly over the rationals.
    pub fn build(r: usize) -> Result<Self> {
        let n = r + 2;
        let rat = |num: i64, den: i64| BigRational::new(BigInt::from(num), BigInt::from(den));

        // Rows: r moment equations, then p(1) = 0 and p(-1) = 1.
        let mut a: Vec<Vec<BigRational>> = Vec::with_capacity(n);
        for j in 0..r {
            let mut row: Vec<BigRational> = (0..n)
                .map(|i| {
                    let e = (i + j + 1) as i64;
                    // integral of s^(i+j) over [-1, 1]
                    if (i + j) % 2 == 0 {
                        rat(2, e)
                    } else {
                        BigRational::zero()
                    }
                })
                .collect();
            let sign = if j % 2 == 0 { 1 } else { -1 };
            row.push(rat(sign, (j + 1) as i64));
            a.push(row);
        }
        let mut at_one = vec![BigRational::one(); n];
        at_one.push(BigRational::zero());
        a.push(at_one);
        let mut at_minus_one: Vec<BigRational> = (0..n)
            .map(|i| if i % 2 == 0 { BigRational::one() } else { -BigRational::one() })
            .collect();
        at_minus_one.push(BigRational::one());
        a.push(at_minus_one);

        let exact = solve_rational(a).ok_or(Error::SingularSystem(r))?;
        let coeffs = exact
            .iter()
            .map(|c| c.to_f64().unwrap_or(f64::NAN))
            .collect();
        Ok(Self { r, exact, coeffs })
    }

    pub fn order(&self) -> usize {
        self.r
    }

    /// Ascending coefficients of `p` as exact rationals.
    pub fn exact_coeffs(&self) -> &[BigRational] {
        &self.exact
    }

    /// Ascending coefficients of `p` in double precision.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Evaluates `p` without clamping.
    #[inline]
    pub fn eval_poly(&self, s: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * s + c)
    }

    /// Evaluates `g(s)`.
    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        if s < -1.0 {
            1.0
        } else if s > 1.0 {
            0.0
        } else {
            self.eval_poly(s)
        }
    }
}

/// Gauss-Jordan elimination on an augmented matrix; `None` if singular.
fn solve_rational(mut a: Vec<Vec<BigRational>>) -> Option<Vec<BigRational>> {
    let n = a.len();
    for col in 0..n {
        let pivot = (col..n).find(|&row| !a[row][col].is_zero())?;
        a.swap(col, pivot);
        let inv = BigRational::one() / a[col][col].clone();
        for v in a[col].iter_mut() {
            *v = v.clone() * inv.clone();
        }
        for row in 0..n {
            if row == col || a[row][col].is_zero() {
                continue;
            }
            let factor = a[row][col].clone();
            for c in col..=n {
                let sub = factor.clone() * a[col][c].clone();
                a[row][c] = a[row][c].clone() - sub;
            }
        }
    }
    Some(a.into_iter().map(|row| row[n].clone()).collect())
}

/// Exact value of the `j`-th moment of `p` on `[-1, 1]`.
pub fn exact_moment(coeffs: &[BigRational], j: usize) -> BigRational {
    coeffs
        .iter()
        .enumerate()
        .filter(|(i, _)| (i + j) % 2 == 0)
        .map(|(i, c)| c.clone() * BigRational::new(BigInt::from(2), BigInt::from((i + j + 1) as i64)))
        .fold(BigRational::zero(), |acc, x| acc + x)
}

/// Equidistant knots `s_1 < ... < s_k` together with a smoothing width.
///
/// `delta == 0` selects the raw indicators `1_{(-inf, s_j]}(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedIndicatorGrid {
    start: f64,
    end: f64,
    k: usize,
    spacing: f64,
    delta: f64,
}

impl SmoothedIndicatorGrid {
    pub fn new(start: f64, end: f64, k: usize, delta: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("grid needs at least one knot".into()));
        }
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParameter(format!("smoothing width {delta} must be >= 0")));
        }
        if k > 1 && !(end > start) {
            return Err(Error::InvalidParameter(format!("empty interval [{start}, {end}]")));
        }
        let spacing = if k > 1 { (end - start) / (k - 1) as f64 } else { 1.0 };
        let end = if k > 1 { end } else { start };
        Ok(Self { start, end, k, spacing, delta })
    }

    /// Builds a grid from explicit knots, rejecting non-equidistant input.
    pub fn from_knots(knots: &[f64], delta: f64) -> Result<Self> {
        let k = knots.len();
        if k == 0 {
            return Err(Error::InvalidParameter("grid needs at least one knot".into()));
        }
        let grid = Self::new(knots[0], knots[k - 1], k, delta)?;
        let scale = (knots[k - 1] - knots[0]).abs().max(f64::MIN_POSITIVE);
        for (j, &s) in knots.iter().enumerate() {
            if ((s - grid.knot(j)) / scale).abs() > 1e-12 {
                return Err(Error::NonEquidistantGrid);
            }
        }
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        Self::new(self.start, self.end, self.k, delta)
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    #[inline]
    pub fn knot(&self, j: usize) -> f64 {
        if j + 1 == self.k {
            self.end
        } else {
            self.start + j as f64 * self.spacing
        }
    }

    pub fn knots(&self) -> Vec<f64> {
        (0..self.k).map(|j| self.knot(j)).collect()
    }

    /// Component `j` of `g^{k,delta}(t)`.
    #[inline]
    pub fn component(&self, kernel: &SmoothingPolynomial, t: f64, j: usize) -> f64 {
        let s = self.knot(j);
        if self.delta > 0.0 {
            kernel.eval((t - s) / self.delta)
        } else if t <= s {
            1.0
        } else {
            0.0
        }
    }

    /// `g^{k,delta}(t)` evaluated componentwise.
    pub fn eval_vector(&self, kernel: &SmoothingPolynomial, t: f64) -> Vec<f64> {
        (0..self.k).map(|j| self.component(kernel, t, j)).collect()
    }

    /// Writes `g^{k,delta}(t)` into `out`.
    pub fn eval_into(&self, kernel: &SmoothingPolynomial, t: f64, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.component(kernel, t, j);
        }
    }

    /// First index `j` whose knot satisfies `s_j > x` (`strict`) or
    /// `s_j >= x`; `k` if none does. Returns the number of probes as well.
    #[inline]
    fn first_knot_above(&self, x: f64, strict: bool) -> (usize, u64) {
        let above = |j: usize| {
            let s = self.knot(j);
            if strict {
                s > x
            } else {
                s >= x
            }
        };
        let guess = if self.k == 1 {
            0.0
        } else {
            ((x - self.start) / self.spacing).floor() + 1.0
        };
        let mut j = guess.clamp(0.0, self.k as f64) as usize;
        let mut probes = 1;
        while j > 0 && above(j - 1) {
            j -= 1;
            probes += 1;
        }
        while j < self.k && !above(j) {
            j += 1;
            probes += 1;
        }
        (j, probes)
    }

    /// `sum_i a_i g^{k,delta}(t_i)` in `O(k + N max(k delta, 1))` operations.
    pub fn accumulate_weighted(
        &self,
        kernel: &SmoothingPolynomial,
        weights: &[f64],
        points: &[f64],
    ) -> Result<Vec<f64>> {
        self.accumulate_weighted_counted(kernel, weights, points)
            .map(|(v, _)| v)
    }

    /// As [`accumulate_weighted`](Self::accumulate_weighted), also returning
    /// the number of elementary operations performed.
    pub fn accumulate_weighted_counted(
        &self,
        kernel: &SmoothingPolynomial,
        weights: &[f64],
        points: &[f64],
    ) -> Result<(Vec<f64>, u64)> {
        if weights.len() != points.len() {
            return Err(Error::LengthMismatch {
                expected: points.len(),
                got: weights.len(),
            });
        }
        let mut acc = AccumulateBuffer::new(self.k);
        let ops = self.accumulate_into(kernel, weights.iter().copied().zip(points.iter().copied()), &mut acc);
        let (out, scan_ops) = acc.finish();
        Ok((out, ops + scan_ops))
    }

    /// Adds `(weight, point)` pairs into a partially accumulated buffer.
    /// Returns the number of operations performed.
    pub fn accumulate_into<I>(
        &self,
        kernel: &SmoothingPolynomial,
        pairs: I,
        acc: &mut AccumulateBuffer,
    ) -> u64
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        debug_assert_eq!(acc.local.len(), self.k);
        let mut ops = 0u64;
        for (a, t) in pairs {
            if self.delta > 0.0 {
                // g = 1 for every knot with s_j > t + delta
                let (jstar, p1) = self.first_knot_above(t + self.delta, true);
                acc.tally[jstar] += a;
                // g = 0 for every knot with s_j < t - delta
                let (lo, p2) = self.first_knot_above(t - self.delta, false);
                ops += p1 + p2;
                for j in lo..jstar {
                    acc.local[j] += a * kernel.eval((t - self.knot(j)) / self.delta);
                }
                ops += (jstar - lo.min(jstar)) as u64;
            } else {
                let (jstar, p) = self.first_knot_above(t, false);
                acc.tally[jstar] += a;
                ops += p;
            }
        }
        ops
    }
}

/// Scratch space for the scan-based accumulation: local window contributions
/// plus unit tallies at `j*(t)` that are prefix-summed at the end.
#[derive(Debug, Clone)]
pub struct AccumulateBuffer {
    local: Vec<f64>,
    tally: Vec<f64>,
}

impl AccumulateBuffer {
    pub fn new(k: usize) -> Self {
        Self {
            local: vec![0.0; k],
            tally: vec![0.0; k + 1],
        }
    }

    /// Applies the cumulative sum and returns the accumulated vector together
    /// with the operation count of the initialisation and scan.
    pub fn finish(self) -> (Vec<f64>, u64) {
        let k = self.local.len();
        let mut out = self.local;
        let mut running = 0.0;
        for (o, t) in out.iter_mut().zip(&self.tally) {
            running += t;
            *o += running;
        }
        (out, 2 * k as u64 + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn cubic_kernel_matches_closed_form() {
        let k = SmoothingPolynomial::build(3).unwrap();
        assert_eq!(
            k.exact_coeffs(),
            &[rat(1, 2), rat(-9, 8), rat(0, 1), rat(5, 8), rat(0, 1)]
        );
    }

    #[test]
    fn linear_kernel_and_even_order_coincidence() {
        // hand solution of int p = 1, p(1) = 0, p(-1) = 1 with deg p <= 2
        let k1 = SmoothingPolynomial::build(1).unwrap();
        assert_eq!(k1.exact_coeffs(), &[rat(1, 2), rat(-1, 2), rat(0, 1)]);
        let k0 = SmoothingPolynomial::build(0).unwrap();
        assert_eq!(k0.exact_coeffs(), &[rat(1, 2), rat(-1, 2)]);
        for r in [0usize, 2, 4, 6] {
            let even = SmoothingPolynomial::build(r).unwrap();
            let odd = SmoothingPolynomial::build(r + 1).unwrap();
            for (i, c) in odd.exact_coeffs().iter().enumerate() {
                let e = even.exact_coeffs().get(i).cloned().unwrap_or_else(BigRational::zero);
                assert_eq!(&e, c, "r = {r}, coefficient {i}");
            }
        }
    }

    #[test]
    fn eval_g_examples() {
        let k = SmoothingPolynomial::build(3).unwrap();
        assert_eq!(k.eval(-2.0), 1.0);
        assert_eq!(k.eval(2.0), 0.0);
        assert!((k.eval(0.0) - 0.5).abs() < 1e-15);
        assert!((k.eval(0.5) - 0.015625).abs() < 1e-15);
        assert!((k.eval(-1.0) - 1.0).abs() < 1e-12);
        assert!(k.eval(1.0).abs() < 1e-12);
    }

    #[test]
    fn moments_hold_exactly() {
        for r in 0..=9 {
            let k = SmoothingPolynomial::build(r).unwrap();
            for j in 0..r {
                let sign = if j % 2 == 0 { 1 } else { -1 };
                assert_eq!(exact_moment(k.exact_coeffs(), j), rat(sign, j as i64 + 1));
            }
        }
    }

    #[test]
    fn indicator_is_closed_on_the_right() {
        let kern = SmoothingPolynomial::build(3).unwrap();
        let g = SmoothedIndicatorGrid::new(0.0, 1.0, 5, 0.0).unwrap();
        let v = g.eval_vector(&kern, 0.5);
        assert_eq!(v, vec![0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn eval_vector_left_of_grid_is_ones() {
        let kern = SmoothingPolynomial::build(3).unwrap();
        let g = SmoothedIndicatorGrid::new(0.5, 1.5, 7, 0.25).unwrap();
        assert!(g.eval_vector(&kern, 0.2).iter().all(|&x| x == 1.0));
        let (v, _) = g.accumulate_weighted_counted(&kern, &[1.0], &[0.2]).unwrap();
        assert_eq!(v, vec![1.0; 7]);
    }

    #[test]
    fn eval_vector_matches_scalar() {
        let kern = SmoothingPolynomial::build(3).unwrap();
        let g = SmoothedIndicatorGrid::new(0.5, 1.5, 7, 0.25).unwrap();
        let v = g.eval_vector(&kern, 1.0);
        for (j, s) in g.knots().iter().enumerate() {
            assert_eq!(v[j], kern.eval((1.0 - s) / 0.25));
        }
    }

    #[test]
    fn rejects_non_equidistant() {
        assert!(matches!(
            SmoothedIndicatorGrid::from_knots(&[0.0, 0.3, 1.0], 0.1),
            Err(Error::NonEquidistantGrid)
        ));
        assert!(SmoothedIndicatorGrid::from_knots(&[0.0, 0.5, 1.0], 0.1).is_ok());
    }

    #[test]
    fn accumulate_matches_naive_sum() {
        let kern = SmoothingPolynomial::build(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for delta in [0.0, 0.003, 0.05, 0.4] {
            let g = SmoothedIndicatorGrid::new(0.0, 1.0, 100, delta).unwrap();
            let pts: Vec<f64> = (0..1000).map(|_| rng.random_range(-0.3..1.3)).collect();
            let w: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = g.accumulate_weighted(&kern, &w, &pts).unwrap();
            let mut naive = vec![0.0; 100];
            for (a, t) in w.iter().zip(&pts) {
                for (n, v) in naive.iter_mut().zip(g.eval_vector(&kern, *t)) {
                    *n += a * v;
                }
            }
            let scale = 1.0 + w.iter().map(|a| a.abs()).sum::<f64>();
            for (x, y) in fast.iter().zip(&naive) {
                assert!((x - y).abs() <= 1e-12 * scale, "delta {delta}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let kern = SmoothingPolynomial::build(3).unwrap();
        let g = SmoothedIndicatorGrid::new(0.0, 1.0, 4, 0.1).unwrap();
        assert!(matches!(
            g.accumulate_weighted(&kern, &[1.0], &[0.1, 0.2]),
            Err(Error::LengthMismatch { .. })
        ));
    }
}
