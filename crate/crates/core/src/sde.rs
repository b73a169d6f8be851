//! Coupled Milstein samplers for geometric Brownian motion
//! `dX = mu X dt + sigma X dW`, `X_0 = 1`, and closed-form distribution
//! functions of the terminal value, the running maximum and the exit time
//! below a barrier.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::mlmc::CoupledSampler;
use crate::rng::SampleRng;

/// Refinement factor of the time grids.
pub const REFINEMENT: u32 = 2;

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub mu: f64,
    pub sigma: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
}

impl GbmParams {
    pub const X0: f64 = 1.0;

    pub fn new(mu: f64, sigma: f64, horizon: f64) -> Result<Self> {
        if !(sigma > 0.0) || !(horizon > 0.0) || !mu.is_finite() || !sigma.is_finite() || !horizon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "need sigma > 0 and T > 0, got sigma = {sigma}, T = {horizon}"
            )));
        }
        Ok(Self { mu, sigma, horizon })
    }

    /// Drift of `ln X`, `mu - sigma^2 / 2`.
    pub fn log_drift(&self) -> f64 {
        self.mu - 0.5 * self.sigma * self.sigma
    }

    /// The law of `X_T`.
    pub fn terminal_law(&self) -> Lognormal {
        Lognormal {
            m: Self::X0.ln() + self.log_drift() * self.horizon,
            s: self.sigma * self.horizon.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionalKind {
    Terminal,
    RunningMax,
    ExitTime { barrier: f64 },
}

impl FunctionalKind {
    pub fn name(&self) -> &'static str {
        match self {
            FunctionalKind::Terminal => "terminal",
            FunctionalKind::RunningMax => "max",
            FunctionalKind::ExitTime { .. } => "exit",
        }
    }
}

/// Parameters, functional and interval used for each model in the
/// benchmarks.
pub fn default_model(kind: &str) -> Option<(GbmParams, FunctionalKind, (f64, f64))> {
    match kind {
        "terminal" => Some((
            GbmParams { mu: 0.05, sigma: 0.2, horizon: 1.0 },
            FunctionalKind::Terminal,
            (0.5, 1.5),
        )),
        "max" => Some((
            GbmParams { mu: 0.5, sigma: 0.2, horizon: 1.0 },
            FunctionalKind::RunningMax,
            (1.05, 2.05),
        )),
        "exit" => Some((
            GbmParams { mu: 0.01, sigma: 0.2, horizon: 2.0 },
            FunctionalKind::ExitTime { barrier: 0.95 },
            (0.25, 1.25),
        )),
        _ => None,
    }
}

/// Time reported for the first step whose bridge minimum crosses the barrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitRule {
    /// Right endpoint of the crossing step.
    #[default]
    RightEndpoint,
    /// First passage time of the frozen-coefficient bridge inside the
    /// crossing step, driven by the uniform that decided the crossing.
    BridgeHittingTime,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbmSampler {
    params: GbmParams,
    kind: FunctionalKind,
    exit_rule: ExitRule,
}

impl GbmSampler {
    pub fn new(params: GbmParams, kind: FunctionalKind) -> Result<Self> {
        GbmParams::new(params.mu, params.sigma, params.horizon)?;
        if let FunctionalKind::ExitTime { barrier } = kind {
            if !(barrier > 0.0 && barrier < GbmParams::X0) {
                return Err(Error::InvalidParameter(format!(
                    "barrier must lie in (0, X0 = 1), got {barrier}"
                )));
            }
        }
        Ok(Self {
            params,
            kind,
            exit_rule: ExitRule::default(),
        })
    }

    pub fn with_exit_rule(mut self, rule: ExitRule) -> Self {
        self.exit_rule = rule;
        self
    }

    pub fn exit_rule(&self) -> ExitRule {
        self.exit_rule
    }

    /// Exit time reported for a crossing in the step `[t, t + h]` of a bridge
    /// from `w0` to `w1` with variance `var`.
    fn crossing_time(&self, t: f64, h: f64, w0: f64, w1: f64, var: f64, u: f64, barrier: f64) -> f64 {
        let tau = match self.exit_rule {
            ExitRule::RightEndpoint => t + h,
            ExitRule::BridgeHittingTime => t + bridge_hitting_time(w0 - barrier, w1 - barrier, var, h, u),
        };
        tau.min(self.params.horizon)
    }

    pub fn params(&self) -> &GbmParams {
        &self.params
    }

    pub fn kind(&self) -> &FunctionalKind {
        &self.kind
    }

    fn step_size(&self, level: usize) -> f64 {
        self.params.horizon / (REFINEMENT as f64).powi(level as i32)
    }

    #[inline]
    fn milstein(&self, x: f64, h: f64, dw: f64) -> f64 {
        let GbmParams { mu, sigma, .. } = self.params;
        x + mu * x * h + sigma * x * dw + 0.5 * sigma * sigma * x * (dw * dw - h)
    }

    /// Brownian increments of one fine path plus one uniform per fine step
    /// for the bridge minima (exit time only).
    fn draw(&self, level: usize, rng: &mut SampleRng) -> (Vec<f64>, Vec<f64>) {
        let steps = (REFINEMENT as usize).pow(level as u32);
        let sd = self.step_size(level).sqrt();
        let mut dw = Vec::with_capacity(steps);
        let mut u = Vec::new();
        let exit = matches!(self.kind, FunctionalKind::ExitTime { .. });
        for _ in 0..steps {
            let z: f64 = StandardNormal.sample(rng);
            dw.push(sd * z);
            if exit {
                // (0, 1]: ln U must be finite
                u.push(1.0 - rng.random::<f64>());
            }
        }
        (dw, u)
    }

    /// Terminal value or running maximum on the grid with step `h`.
    fn path_functional(&self, h: f64, dw: &[f64]) -> f64 {
        let mut x = GbmParams::X0;
        let mut max = x;
        for &d in dw {
            x = self.milstein(x, h, d);
            max = max.max(x);
        }
        match self.kind {
            FunctionalKind::RunningMax => max,
            _ => x,
        }
    }

    /// Exit time on the finest grid, bridge minimum per step.
    fn exit_fine(&self, h: f64, dw: &[f64], u: &[f64], barrier: f64) -> f64 {
        let sigma = self.params.sigma;
        let mut x = GbmParams::X0;
        for (i, (&d, &ui)) in dw.iter().zip(u).enumerate() {
            let next = self.milstein(x, h, d);
            let v = sigma * x;
            if bridge_minimum(x, next, v * v * h, ui) <= barrier {
                return self.crossing_time(i as f64 * h, h, x, next, v * v * h, ui, barrier);
            }
            x = next;
        }
        self.params.horizon
    }

    /// Exit time on the grid with step `M h`, driven by the fine increments.
    ///
    /// Inside each coarse step the frozen-coefficient bridge is pinned at the
    /// fine time points through the fine Brownian path; the minimum over the
    /// coarse step is the minimum of the sub-bridge minima drawn with the fine
    /// uniforms.
    fn exit_coarse(&self, h: f64, dw: &[f64], u: &[f64], barrier: f64) -> f64 {
        let sigma = self.params.sigma;
        let mf = REFINEMENT as usize;
        let hc = h * mf as f64;
        let mut x = GbmParams::X0;
        for (j, (dwc, uc)) in dw.chunks(mf).zip(u.chunks(mf)).enumerate() {
            let total: f64 = dwc.iter().sum();
            let next = self.milstein(x, hc, total);
            let v = sigma * x;
            let mut w = 0.0;
            let mut left = x;
            for (q, (&d, &uq)) in dwc.iter().zip(uc).enumerate() {
                w += d;
                let frac = (q + 1) as f64 / mf as f64;
                let right = if q + 1 == mf {
                    next
                } else {
                    x + frac * (next - x) + v * (w - frac * total)
                };
                if bridge_minimum(left, right, v * v * h, uq) <= barrier {
                    return match self.exit_rule {
                        ExitRule::RightEndpoint => ((j + 1) as f64 * hc).min(self.params.horizon),
                        _ => self.crossing_time((j * mf + q) as f64 * h, h, left, right, v * v * h, uq, barrier),
                    };
                }
                left = right;
            }
            x = next;
        }
        self.params.horizon
    }

    /// Closed-form distribution function of the functional.
    pub fn exact_cdf(&self, s: f64) -> Result<f64> {
        exact_cdf(&self.params, &self.kind, s)
    }
}

/// Minimum of a Brownian bridge from `w0` to `w1` with variance `var` over
/// the step, sampled by inversion with the uniform `u` in `(0, 1]`.
#[inline]
pub fn bridge_minimum(w0: f64, w1: f64, var: f64, u: f64) -> f64 {
    let d = w1 - w0;
    0.5 * (w0 + w1 - (d * d - 2.0 * var * u.ln()).sqrt())
}

/// First passage time below zero of a Brownian bridge from `a0 > 0` to
/// `a1` over `[0, h]` with variance `var` over the whole step, given that it
/// does cross, i.e. `a1 <= 0` or `u <= exp(-2 a0 a1 / var)`.
///
/// Solves `G(t) = u` for the joint probability
/// `G(t) = P(tau <= t) = exp(-2 a0 a1 / var) Phi(m1 / s) + Phi(-m2 / s)` with
/// `m1 = (a1 t - a0 (h - t)) / h`, `m2 = (a0 (h - t) + a1 t) / h` and
/// `s^2 = var t (h - t) / h^2`, which also holds for `a1 <= 0`.
pub fn bridge_hitting_time(a0: f64, a1: f64, var: f64, h: f64, u: f64) -> f64 {
    if a0 <= 0.0 {
        return 0.0;
    }
    let log_coef = -2.0 * a0 * a1 / var;
    let total = if a1 <= 0.0 { 1.0 } else { log_coef.exp() };
    let g = |t: f64| {
        let s = (var * t * (h - t)).sqrt() / h;
        let m1 = (a1 * t - a0 * (h - t)) / h;
        let m2 = (a0 * (h - t) + a1 * t) / h;
        (log_coef + ln_normal_cdf(m1 / s)).exp() + normal_cdf(-m2 / s)
    };
    let target = u.min(total);
    let (mut lo, mut hi) = (0.0, h);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `ln Phi(x)`, with the asymptotic series far in the left tail.
pub fn ln_normal_cdf(x: f64) -> f64 {
    if x > -30.0 {
        return normal_cdf(x).ln();
    }
    let z2 = x * x;
    -0.5 * z2 - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
}

impl CoupledSampler for GbmSampler {
    fn refinement(&self) -> u32 {
        REFINEMENT
    }

    fn sample_base(&self, rng: &mut SampleRng) -> f64 {
        let (dw, u) = self.draw(0, rng);
        let h = self.step_size(0);
        match self.kind {
            FunctionalKind::ExitTime { barrier } => self.exit_fine(h, &dw, &u, barrier),
            _ => self.path_functional(h, &dw),
        }
    }

    fn sample_pair(&self, level: usize, rng: &mut SampleRng) -> (f64, f64) {
        assert!(level >= 1, "coupled pairs start at level 1");
        let (dw, u) = self.draw(level, rng);
        let h = self.step_size(level);
        match self.kind {
            FunctionalKind::ExitTime { barrier } => (
                self.exit_fine(h, &dw, &u, barrier),
                self.exit_coarse(h, &dw, &u, barrier),
            ),
            _ => {
                let coarse: Vec<f64> = dw
                    .chunks(REFINEMENT as usize)
                    .map(|c| c.iter().sum())
                    .collect();
                (
                    self.path_functional(h, &dw),
                    self.path_functional(h * REFINEMENT as f64, &coarse),
                )
            }
        }
    }
}

/// Distribution function of the functional of the exact solution.
pub fn exact_cdf(params: &GbmParams, kind: &FunctionalKind, s: f64) -> Result<f64> {
    if !s.is_finite() {
        return Err(Error::OutsideSupport(s));
    }
    let GbmParams { sigma, horizon: t, .. } = *params;
    let nu = params.log_drift();
    match *kind {
        FunctionalKind::Terminal => {
            if s <= 0.0 {
                return Err(Error::OutsideSupport(s));
            }
            Ok(params.terminal_law().cdf(s))
        }
        FunctionalKind::RunningMax => {
            if s <= 0.0 {
                return Err(Error::OutsideSupport(s));
            }
            if s < GbmParams::X0 {
                return Ok(0.0);
            }
            let den = sigma * (2.0 * t).sqrt();
            let d1 = (s.ln() - nu * t) / den;
            let d2 = (s.ln() + nu * t) / den;
            let p = 2.0 * params.mu / (sigma * sigma) - 1.0;
            Ok(1.0 - 0.5 * erfc(d1) - 0.5 * erfc(d2) * s.powf(p))
        }
        FunctionalKind::ExitTime { barrier } => {
            if s < 0.0 {
                return Err(Error::OutsideSupport(s));
            }
            if s >= t {
                return Ok(1.0);
            }
            if s == 0.0 {
                return Ok(0.0);
            }
            Ok(first_passage_cdf(barrier.ln(), nu, sigma, s))
        }
    }
}

/// `P(inf {t : nu t + sigma W_t <= a} <= s)` for a level `a < 0`.
pub fn first_passage_cdf(a: f64, nu: f64, sigma: f64, s: f64) -> f64 {
    let sd = sigma * s.sqrt();
    normal_cdf((a - nu * s) / sd) + (2.0 * nu * a / (sigma * sigma)).exp() * normal_cdf((a + nu * s) / sd)
}

/// Lognormal law of `exp(m + s Z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lognormal {
    pub m: f64,
    pub s: f64,
}

impl Lognormal {
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            normal_cdf((x.ln() - self.m) / self.s)
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let z = (x.ln() - self.m) / self.s;
        (-0.5 * z * z).exp() / (x * self.s * (2.0 * std::f64::consts::PI).sqrt())
    }

    /// `n`-th derivative of the density.
    ///
    /// With `y = ln x` the density is `exp(q(y))` for a quadratic `q`, and
    /// `rho^(n)(x) = rho(x) P_n(y) / x^n` with `P_0 = 1` and
    /// `P_{n+1} = (q'(y) - n) P_n + P_n'`.
    pub fn density_derivative(&self, n: usize, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let y = x.ln();
        // P as polynomial in y; q'(y) = -1 - (y - m) / s^2
        let s2 = self.s * self.s;
        let qp = [-1.0 + self.m / s2, -1.0 / s2];
        let mut p = vec![1.0];
        for k in 0..n {
            let mut next = vec![0.0; p.len() + 1];
            for (i, &c) in p.iter().enumerate() {
                next[i] += (qp[0] - k as f64) * c;
                next[i + 1] += qp[1] * c;
                if i > 0 {
                    next[i - 1] += i as f64 * c;
                }
            }
            p = next;
        }
        let pv = p.iter().rev().fold(0.0, |acc, &c| acc * y + c);
        self.pdf(x) * pv / x.powi(n as i32)
    }

    /// `sup |rho^(n)|` on `[a, b]`: a dense scan refined by golden-section
    /// search around the best grid point.
    pub fn sup_abs_density_derivative(&self, n: usize, a: f64, b: f64) -> f64 {
        let f = |x: f64| self.density_derivative(n, x).abs();
        let pts = 4000;
        let h = (b - a) / pts as f64;
        let mut best = (a, f(a));
        for i in 1..=pts {
            let x = a + i as f64 * h;
            let v = f(x);
            if v > best.1 {
                best = (x, v);
            }
        }
        let (mut lo, mut hi) = ((best.0 - h).max(a), (best.0 + h).min(b));
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..100 {
            let x1 = hi - g * (hi - lo);
            let x2 = lo + g * (hi - lo);
            if f(x1) > f(x2) {
                hi = x2;
            } else {
                lo = x1;
            }
        }
        best.1.max(f(0.5 * (lo + hi)))
    }
}

/// Law available for exact simulation at every level, so that the coupled
/// differences vanish.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExactLaw {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
}

impl ExactLaw {
    pub fn cdf(&self, s: f64) -> f64 {
        match *self {
            ExactLaw::Uniform { lo, hi } => ((s - lo) / (hi - lo)).clamp(0.0, 1.0),
            ExactLaw::Normal { mean, sd } => normal_cdf((s - mean) / sd),
        }
    }
}

/// `Y^(l) = Y` for every level, with the usual `M^l` cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactSampler {
    pub law: ExactLaw,
}

impl ExactSampler {
    fn draw(&self, rng: &mut SampleRng) -> f64 {
        match self.law {
            ExactLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            ExactLaw::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
        }
    }
}

impl CoupledSampler for ExactSampler {
    fn refinement(&self) -> u32 {
        REFINEMENT
    }

    fn sample_base(&self, rng: &mut SampleRng) -> f64 {
        self.draw(rng)
    }

    fn sample_pair(&self, _level: usize, rng: &mut SampleRng) -> (f64, f64) {
        let y = self.draw(rng);
        (y, y)
    }
}
