//! Blockwise polynomial interpolation on equidistant knots and the two-stage
//! monotonicity correction that turns knot data into a distribution function.
//!
//! Stage one clamps the knot values to a nondecreasing sequence in `[0, 1]`
//! by averaging a forward and a backward running clamp. Stage two replaces
//! the interpolant `phi` on each knot subinterval `[a, b]` by `(f + h) / 2`,
//! where `f` is the running maximum of `phi` from `a` capped at `phi(b)` and
//! `h` the running minimum towards `b` floored at `phi(a)`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::SmoothedIndicatorGrid;
use crate::poly::{bisect, Poly};

/// Equidistant knots `s_j = S0 + (j - 1) (S1 - S0) / (k - 1)` whose count
/// satisfies `(k - 1) % r == 0`, so degree-`r` blocks tile the interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotGrid {
    s0: f64,
    s1: f64,
    r: usize,
    k: usize,
    n: Option<u32>,
}

impl KnotGrid {
    /// The grid with `k_n = ceil(2^n / r) * r + 1` knots.
    pub fn for_refinement(n: u32, r: usize, s0: f64, s1: f64) -> Result<Self> {
        if r == 0 {
            return Err(Error::InvalidParameter("interpolation degree r must be >= 1".into()));
        }
        if n >= 62 || (1u64 << (n + 1)) <= r as u64 {
            return Err(Error::InvalidParameter(format!(
                "refinement index n = {n} must satisfy 2^(n+1) > r = {r}"
            )));
        }
        let blocks = (1usize << n).div_ceil(r);
        let mut grid = Self::new(blocks * r + 1, r, s0, s1)?;
        grid.n = Some(n);
        Ok(grid)
    }

    /// A grid with an explicit knot count.
    pub fn new(k: usize, r: usize, s0: f64, s1: f64) -> Result<Self> {
        if r == 0 {
            return Err(Error::InvalidParameter("interpolation degree r must be >= 1".into()));
        }
        if !(s0 < s1) || !s0.is_finite() || !s1.is_finite() {
            return Err(Error::InvalidParameter(format!("need S0 < S1, got [{s0}, {s1}]")));
        }
        if k < 2 || (k - 1) % r != 0 {
            return Err(Error::InvalidParameter(format!(
                "knot count {k} must be 1 + a positive multiple of r = {r}"
            )));
        }
        Ok(Self { s0, s1, r, k, n: None })
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn refinement(&self) -> Option<u32> {
        self.n
    }

    pub fn degree(&self) -> usize {
        self.r
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.s0, self.s1)
    }

    pub fn spacing(&self) -> f64 {
        (self.s1 - self.s0) / (self.k - 1) as f64
    }

    /// Width of one interpolation block (`r` knot spacings).
    pub fn block_width(&self) -> f64 {
        self.spacing() * self.r as f64
    }

    #[inline]
    pub fn knot(&self, j: usize) -> f64 {
        if j + 1 == self.k {
            self.s1
        } else {
            self.s0 + j as f64 * self.spacing()
        }
    }

    pub fn knots(&self) -> Vec<f64> {
        (0..self.k).map(|j| self.knot(j)).collect()
    }

    /// The same knots paired with a smoothing width.
    pub fn indicator_grid(&self, delta: f64) -> Result<SmoothedIndicatorGrid> {
        SmoothedIndicatorGrid::new(self.s0, self.s1, self.k, delta)
    }

    /// Evaluation mesh: all knots plus `per_interval - 1` interior points in
    /// every knot subinterval.
    pub fn mesh(&self, per_interval: usize) -> Vec<f64> {
        let per = per_interval.max(1);
        let mut out = Vec::with_capacity((self.k - 1) * per + 1);
        for j in 0..self.k - 1 {
            let (a, b) = (self.knot(j), self.knot(j + 1));
            for i in 0..per {
                out.push(a + (b - a) * i as f64 / per as f64);
            }
        }
        out.push(self.s1);
        out
    }
}

/// Lagrange basis polynomials on the nodes `0, h, ..., r h`.
fn lagrange_basis(r: usize, h: f64) -> Vec<Poly> {
    (0..=r)
        .map(|i| {
            let mut p = Poly::constant(1.0);
            for m in (0..=r).filter(|&m| m != i) {
                let denom = (i as f64 - m as f64) * h;
                // multiply by (u - m h) / denom
                let c = p.coeffs();
                let mut next = vec![0.0; c.len() + 1];
                for (e, &ce) in c.iter().enumerate() {
                    next[e + 1] += ce / denom;
                    next[e] -= ce * m as f64 * h / denom;
                }
                p = Poly::new(next);
            }
            p
        })
        .collect()
}

/// Lebesgue constant of degree-`r` interpolation at `r + 1` equidistant
/// nodes, i.e. the sup-norm Lipschitz constant of the blockwise interpolant.
pub fn lebesgue_constant(r: usize) -> f64 {
    let basis = lagrange_basis(r, 1.0);
    let mut best: f64 = 1.0;
    // On each node subinterval every basis polynomial has a fixed sign.
    for j in 0..r {
        let (a, b) = (j as f64, j as f64 + 1.0);
        let mid = 0.5 * (a + b);
        let sum = basis.iter().fold(Poly::constant(0.0), |acc, p| {
            let sign = if p.eval(mid) >= 0.0 { 1.0 } else { -1.0 };
            acc.add(&p.scale(sign))
        });
        for x in sum.derivative().sign_changes_in(a, b) {
            best = best.max(sum.eval(x));
        }
    }
    best
}

/// One polynomial piece on `[start, end]`, stored in powers of `s - start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub start: f64,
    pub end: f64,
    pub poly: Poly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewisePolynomial {
    pieces: Vec<Piece>,
}

impl PiecewisePolynomial {
    fn from_pieces(pieces: Vec<Piece>) -> Self {
        debug_assert!(!pieces.is_empty());
        Self { pieces }
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.pieces.iter().map(|p| p.start).collect();
        b.push(self.pieces.last().map(|p| p.end).unwrap_or(f64::NAN));
        b
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.pieces[0].start, self.pieces[self.pieces.len() - 1].end)
    }

    /// Evaluates at `s`, clamping `s` to the domain.
    pub fn eval(&self, s: f64) -> f64 {
        let (lo, hi) = self.domain();
        let s = s.clamp(lo, hi);
        let idx = self
            .pieces
            .partition_point(|p| p.start <= s)
            .saturating_sub(1);
        let p = &self.pieces[idx];
        p.poly.eval(s - p.start)
    }

    /// CSV rows `start,end,c0,...,cd` with a header, coefficients in powers
    /// of `s - start`.
    pub fn to_csv(&self) -> String {
        let d = self
            .pieces
            .iter()
            .map(|p| p.poly.coeffs().len())
            .max()
            .unwrap_or(1);
        let mut out = String::from("start,end");
        for i in 0..d {
            let _ = write!(out, ",c{i}");
        }
        out.push('\n');
        for p in &self.pieces {
            let _ = write!(out, "{},{}", p.start, p.end);
            for i in 0..d {
                let _ = write!(out, ",{}", p.poly.coeffs().get(i).copied().unwrap_or(0.0));
            }
            out.push('\n');
        }
        out
    }
}

/// Interpolates knot values blockwise with degree `r` polynomials.
pub fn interpolate(grid: &KnotGrid, values: &[f64]) -> Result<PiecewisePolynomial> {
    if values.len() != grid.len() {
        return Err(Error::LengthMismatch {
            expected: grid.len(),
            got: values.len(),
        });
    }
    let r = grid.degree();
    let basis = lagrange_basis(r, grid.spacing());
    let blocks = (grid.len() - 1) / r;
    let pieces = (0..blocks)
        .map(|b| {
            let j0 = b * r;
            let poly = basis
                .iter()
                .zip(&values[j0..=j0 + r])
                .fold(Poly::constant(0.0), |acc, (l, &y)| acc.add(&l.scale(y)));
            Piece {
                start: grid.knot(j0),
                end: grid.knot(j0 + r),
                poly,
            }
        })
        .collect();
    Ok(PiecewisePolynomial::from_pieces(pieces))
}

/// Stage one: `(u + v) / 2` with the forward clamp `u` and backward clamp `v`.
pub fn monotone_correct_values(y: &[f64]) -> Vec<f64> {
    let k = y.len();
    let mut u = vec![0.0; k];
    let mut prev = 0.0;
    for (uj, &yj) in u.iter_mut().zip(y) {
        prev = yj.max(prev).min(1.0);
        *uj = prev;
    }
    let mut v = vec![0.0; k];
    let mut next = 1.0;
    for j in (0..k).rev() {
        next = y[j].min(next).max(0.0);
        v[j] = next;
    }
    u.iter().zip(&v).map(|(a, b)| 0.5 * (a + b)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Part {
    Follow,
    Flat(f64),
}

#[derive(Debug, Clone, Copy)]
struct Span {
    a: f64,
    b: f64,
    part: Part,
}

fn push_span(out: &mut Vec<Span>, a: f64, b: f64, part: Part) {
    if b <= a {
        return;
    }
    if let Some(last) = out.last_mut() {
        if last.part == part && matches!(part, Part::Flat(_)) {
            last.b = b;
            return;
        }
    }
    out.push(Span { a, b, part });
}

/// `min(max_{[0, u]} p, p(w))` on `[0, w]` as a list of spans.
fn capped_running_max(p: &Poly, w: f64) -> Vec<Span> {
    let mut pts = vec![0.0];
    pts.extend(p.derivative().sign_changes_in(0.0, w));
    pts.push(w);

    let mut runmax = Vec::new();
    let mut level = p.eval(0.0);
    for seg in pts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let pb = if b == w { p.eval(w) } else { p.eval(b) };
        if pb > level {
            let t = if p.eval(a) >= level { a } else { bisect(|x| p.eval(x), a, b, level) };
            push_span(&mut runmax, a, t, Part::Flat(level));
            push_span(&mut runmax, t, b, Part::Follow);
            level = pb;
        } else {
            push_span(&mut runmax, a, b, Part::Flat(level));
        }
    }

    let cap = p.eval(w);
    let mut out = Vec::new();
    for s in runmax {
        match s.part {
            Part::Flat(l) => push_span(&mut out, s.a, s.b, Part::Flat(l.min(cap))),
            Part::Follow => {
                if p.eval(s.b) <= cap {
                    push_span(&mut out, s.a, s.b, Part::Follow);
                } else if p.eval(s.a) >= cap {
                    push_span(&mut out, s.a, s.b, Part::Flat(cap));
                } else {
                    let t = bisect(|x| p.eval(x), s.a, s.b, cap);
                    push_span(&mut out, s.a, t, Part::Follow);
                    push_span(&mut out, t, s.b, Part::Flat(cap));
                }
            }
        }
    }
    out
}

/// `max(min_{[u, w]} p, p(0))` on `[0, w]`, obtained from the capped running
/// maximum of the reflected negative `-p(w - u)`.
fn floored_running_min(p: &Poly, w: f64) -> Vec<Span> {
    let reflected = p.reflect(w).scale(-1.0);
    let spans = capped_running_max(&reflected, w);
    let mut out = Vec::with_capacity(spans.len());
    for s in spans.iter().rev() {
        let part = match s.part {
            Part::Follow => Part::Follow,
            Part::Flat(l) => Part::Flat(-l),
        };
        push_span(&mut out, w - s.b, w - s.a, part);
    }
    out
}

fn part_poly(part: Part, p: &Poly) -> Poly {
    match part {
        Part::Follow => p.clone(),
        Part::Flat(l) => Poly::constant(l),
    }
}

fn part_at(spans: &[Span], x: f64) -> Part {
    spans
        .iter()
        .find(|s| x >= s.a && x <= s.b)
        .or(spans.last())
        .map(|s| s.part)
        .unwrap_or(Part::Follow)
}

/// A nondecreasing `[0, 1]`-valued piecewise polynomial on `[S0, S1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCdf {
    inner: PiecewisePolynomial,
}

impl MonotoneCdf {
    /// Knot data to distribution function: both correction stages around
    /// the blockwise interpolation.
    pub fn from_values(grid: &KnotGrid, y: &[f64]) -> Result<Self> {
        let corrected = monotone_correct_values(y);
        let phi = interpolate(grid, &corrected)?;
        Ok(monotone_correct_function(&phi, grid))
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.inner.eval(s)
    }

    pub fn as_piecewise(&self) -> &PiecewisePolynomial {
        &self.inner
    }

    pub fn domain(&self) -> (f64, f64) {
        self.inner.domain()
    }

    pub fn to_csv(&self) -> String {
        self.inner.to_csv()
    }
}

/// Stage two: replaces `phi` on each knot subinterval by `(f + h) / 2`.
pub fn monotone_correct_function(phi: &PiecewisePolynomial, grid: &KnotGrid) -> MonotoneCdf {
    let mut pieces = Vec::new();
    for j in 0..grid.len() - 1 {
        let (sa, sb) = (grid.knot(j), grid.knot(j + 1));
        let w = sb - sa;
        let block = phi
            .pieces
            .iter()
            .find(|p| sa >= p.start && sa < p.end)
            .unwrap_or_else(|| &phi.pieces[phi.pieces.len() - 1]);
        let local = block.poly.shift(sa - block.start);

        let f = capped_running_max(&local, w);
        let h = floored_running_min(&local, w);
        let mut cuts: Vec<f64> = f
            .iter()
            .chain(h.iter())
            .flat_map(|s| [s.a, s.b])
            .filter(|&x| x > 0.0 && x < w)
            .collect();
        cuts.push(0.0);
        cuts.push(w);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();

        for c in cuts.windows(2) {
            let (a, b) = (c[0], c[1]);
            if b <= a {
                continue;
            }
            let mid = 0.5 * (a + b);
            let fp = part_poly(part_at(&f, mid), &local);
            let hp = part_poly(part_at(&h, mid), &local);
            let poly = fp.add(&hp).scale(0.5).shift(a);
            let start = if a == 0.0 { sa } else { sa + a };
            let end = if b == w { sb } else { sa + b };
            let poly = if poly.degree() == 0 {
                Poly::constant(poly.coeffs()[0])
            } else {
                poly
            };
            pieces.push(Piece { start, end, poly });
        }
    }
    MonotoneCdf {
        inner: PiecewisePolynomial::from_pieces(pieces),
    }
}

/// `max |a - b|` over the knots and 64 points per knot subinterval. This is
/// a lower bound of the true sup-norm distance.
pub fn sup_distance<A, B>(a: A, b: B, grid: &KnotGrid) -> f64
where
    A: Fn(f64) -> f64,
    B: Fn(f64) -> f64,
{
    sup_distance_on(a, b, &grid.mesh(64))
}

pub fn sup_distance_on<A, B>(a: A, b: B, mesh: &[f64]) -> f64
where
    A: Fn(f64) -> f64,
    B: Fn(f64) -> f64,
{
    mesh.iter()
        .map(|&s| (a(s) - b(s)).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes() {
        let g = KnotGrid::for_refinement(2, 3, 0.5, 1.5).unwrap();
        assert_eq!(g.len(), 7);
        assert_eq!(g.knot(0), 0.5);
        assert_eq!(g.knot(6), 1.5);
        assert!((g.knot(1) - (0.5 + 1.0 / 6.0)).abs() < 1e-15);
        assert_eq!(KnotGrid::for_refinement(3, 3, 0.0, 1.0).unwrap().len(), 10);
        assert_eq!(KnotGrid::for_refinement(2, 1, 0.0, 1.0).unwrap().len(), 5);
        assert_eq!(KnotGrid::for_refinement(1, 3, 0.0, 1.0).unwrap().len(), 4);
        assert!(KnotGrid::for_refinement(1, 4, 0.0, 1.0).is_err());
        assert!(KnotGrid::for_refinement(2, 3, 1.0, 1.0).is_err());
    }

    #[test]
    fn reproduces_constants_and_cubics() {
        let g = KnotGrid::for_refinement(3, 3, -1.0, 2.0).unwrap();
        let c = interpolate(&g, &vec![0.7; g.len()]).unwrap();
        let cubic = |s: f64| 0.3 - s + 0.25 * s * s - 0.1 * s.powi(3);
        let vals: Vec<f64> = g.knots().iter().map(|&s| cubic(s)).collect();
        let q = interpolate(&g, &vals).unwrap();
        for s in g.mesh(50) {
            assert!((c.eval(s) - 0.7).abs() < 1e-13);
            assert!((q.eval(s) - cubic(s)).abs() < 1e-12);
        }
    }

    #[test]
    fn length_mismatch() {
        let g = KnotGrid::for_refinement(2, 3, 0.0, 1.0).unwrap();
        assert!(matches!(
            interpolate(&g, &[0.0; 3]),
            Err(Error::LengthMismatch { expected: 7, got: 3 })
        ));
    }

    #[test]
    fn value_correction_examples() {
        assert_eq!(monotone_correct_values(&[0.1, 0.4, 0.9]), vec![0.1, 0.4, 0.9]);
        assert_eq!(monotone_correct_values(&[0.5, 0.3]), vec![0.4, 0.4]);
        assert_eq!(monotone_correct_values(&[-0.2, 1.4]), vec![0.0, 1.0]);
    }

    #[test]
    fn lebesgue_constant_cubic() {
        let exact = 7.0 * (2.0 * 7f64.sqrt() + 1.0) / 27.0;
        assert!((lebesgue_constant(3) - exact).abs() < 1e-12);
        assert!((lebesgue_constant(1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn function_correction_is_identity_on_monotone_input() {
        let g = KnotGrid::for_refinement(2, 3, 0.0, 1.0).unwrap();
        let y: Vec<f64> = g.knots().iter().map(|s| s * s).collect();
        let phi = interpolate(&g, &y).unwrap();
        let cdf = monotone_correct_function(&phi, &g);
        for s in g.mesh(100) {
            assert!((cdf.eval(s) - phi.eval(s)).abs() < 1e-14);
        }
    }

    #[test]
    fn overshoot_is_flattened() {
        // knot data (0, 0.5, 0.5, 1) makes the cubic overshoot in the middle
        let g = KnotGrid::new(4, 3, 0.0, 1.0).unwrap();
        let phi = interpolate(&g, &[0.0, 0.5, 0.5, 1.0]).unwrap();
        let cdf = monotone_correct_function(&phi, &g);
        let (a, b) = (g.knot(1), g.knot(2));
        for i in 0..=1000 {
            let s = a + (b - a) * i as f64 / 1000.0;
            assert!((cdf.eval(s) - 0.5).abs() < 1e-12, "s = {s}: {}", cdf.eval(s));
        }
        for s in g.knots() {
            assert!((cdf.eval(s) - phi.eval(s)).abs() < 1e-14);
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let g = KnotGrid::for_refinement(2, 3, 0.0, 1.0).unwrap();
        let cdf = MonotoneCdf::from_values(&g, &[0.0, 0.1, 0.2, 0.4, 0.7, 0.9, 1.0]).unwrap();
        let csv = cdf.to_csv();
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("start,end,c0"));
        assert_eq!(lines.count(), cdf.as_piecewise().pieces().len());
    }
}
