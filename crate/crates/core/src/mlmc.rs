//! Vector-valued multilevel estimator: per-level sample stores, mean and
//! max-norm variance estimates, the cost ledger, and replication numbers.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::{KnotGrid, MonotoneCdf};
use crate::kernel::{AccumulateBuffer, SmoothedIndicatorGrid, SmoothingPolynomial};
use crate::rng::{LevelStreams, SampleRng};

/// Smallest replication number on any level.
pub const MIN_REPLICATIONS: usize = 100;

/// Samples per parallel work unit. Fixed so that floating-point reductions
/// do not depend on the number of threads.
const CHUNK: usize = 4096;

/// Generator of coupled approximations `(Y^(l), Y^(l-1))`.
///
/// Implementations must draw all randomness from the supplied stream.
pub trait CoupledSampler: Sync {
    /// Refinement factor `M > 1`.
    fn refinement(&self) -> u32;

    /// One sample of `Y^(0)`.
    fn sample_base(&self, rng: &mut SampleRng) -> f64;

    /// One coupled sample `(Y^(l), Y^(l-1))`, `level >= 1`.
    fn sample_pair(&self, level: usize, rng: &mut SampleRng) -> (f64, f64);

    /// Cost units of one sample at `level`.
    fn cost(&self, level: usize) -> f64 {
        (self.refinement() as f64).powi(level as i32)
    }
}

/// Cost units accumulated by category; constant one in every bound.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    /// Sample generation, `M^l` per coupled sample.
    pub paths: f64,
    /// Incremental mean updates after new samples were drawn.
    pub evaluations: f64,
    /// Max-norm variance estimation on subsamples.
    pub variance: f64,
    /// Re-evaluation after smoothing or interpolation updates.
    pub reevaluation: f64,
}

impl CostLedger {
    pub fn total(&self) -> f64 {
        self.paths + self.evaluations + self.variance + self.reevaluation
    }
}

#[derive(Debug, Clone)]
struct MeanCache {
    grid: SmoothedIndicatorGrid,
    sum: Vec<f64>,
    evaluated: usize,
}

/// Stored functional values of one level plus its current estimates.
#[derive(Debug, Clone)]
pub struct LevelState {
    level: usize,
    streams: LevelStreams,
    fine: Vec<f64>,
    coarse: Vec<f64>,
    bhat: Option<Vec<f64>>,
    vhat: Option<f64>,
    nprime: usize,
    cache: Option<MeanCache>,
}

impl LevelState {
    pub fn new(level: usize, seed: u64) -> Self {
        Self {
            level,
            streams: LevelStreams::new(seed, level),
            fine: Vec::new(),
            coarse: Vec::new(),
            bhat: None,
            vhat: None,
            nprime: 0,
            cache: None,
        }
    }

    /// A level built from explicit samples, for tests and replay.
    pub fn from_samples(level: usize, fine: Vec<f64>, coarse: Vec<f64>) -> Result<Self> {
        if level > 0 && fine.len() != coarse.len() {
            return Err(Error::LengthMismatch {
                expected: fine.len(),
                got: coarse.len(),
            });
        }
        let mut s = Self::new(level, 0);
        s.fine = fine;
        s.coarse = if level == 0 { Vec::new() } else { coarse };
        Ok(s)
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn len(&self) -> usize {
        self.fine.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fine.is_empty()
    }

    pub fn fine(&self) -> &[f64] {
        &self.fine
    }

    pub fn coarse(&self) -> &[f64] {
        &self.coarse
    }

    pub fn bhat(&self) -> Option<&[f64]> {
        self.bhat.as_deref()
    }

    pub fn bhat_maxnorm(&self) -> f64 {
        self.bhat
            .as_ref()
            .map(|b| max_norm(b))
            .unwrap_or(f64::NAN)
    }

    pub fn vhat(&self) -> Option<f64> {
        self.vhat
    }

    pub fn nprime(&self) -> usize {
        self.nprime
    }

    /// Appends `count` fresh samples drawn from the streams with indices
    /// `len()..len() + count` and charges `count * M^l` path units.
    pub fn extend(&mut self, sampler: &dyn CoupledSampler, count: usize, ledger: &mut CostLedger) {
        if count == 0 {
            return;
        }
        let start = self.fine.len();
        let level = self.level;
        let streams = self.streams;
        let drawn: Vec<(f64, f64)> = (start..start + count)
            .into_par_iter()
            .with_min_len(64)
            .map(|i| {
                let mut rng = streams.stream(i as u64);
                if level == 0 {
                    (sampler.sample_base(&mut rng), f64::NAN)
                } else {
                    sampler.sample_pair(level, &mut rng)
                }
            })
            .collect();
        for (f, c) in drawn {
            self.fine.push(f);
            if level > 0 {
                self.coarse.push(c);
            }
        }
        ledger.paths += count as f64 * sampler.cost(level);
    }

    /// Sample mean of the coupled differences, computed from scratch.
    pub fn estimate_mean(&self, grid: &SmoothedIndicatorGrid, kernel: &SmoothingPolynomial) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::EmptyLevel(self.level));
        }
        let sum = self.weighted_sum(grid, kernel, 0, 1.0);
        let n = self.len() as f64;
        Ok(sum.into_iter().map(|x| x / n).collect())
    }

    /// `sum_i (g(y_fine_i) - g(y_coarse_i))` over samples `from..` with weight `w`.
    fn weighted_sum(&self, grid: &SmoothedIndicatorGrid, kernel: &SmoothingPolynomial, from: usize, w: f64) -> Vec<f64> {
        let k = grid.len();
        let n = self.len();
        if from >= n {
            return vec![0.0; k];
        }
        let starts: Vec<usize> = (from..n).step_by(CHUNK).collect();
        let partial: Vec<Vec<f64>> = starts
            .par_iter()
            .map(|&a| {
                let b = (a + CHUNK).min(n);
                let mut buf = AccumulateBuffer::new(k);
                let fine = self.fine[a..b].iter().map(|&t| (w, t));
                grid.accumulate_into(kernel, fine, &mut buf);
                if self.level > 0 {
                    let coarse = self.coarse[a..b].iter().map(|&t| (-w, t));
                    grid.accumulate_into(kernel, coarse, &mut buf);
                }
                buf.finish().0
            })
            .collect();
        let mut out = vec![0.0; k];
        for p in partial {
            for (o, x) in out.iter_mut().zip(p) {
                *o += x;
            }
        }
        out
    }

    /// Updates `bhat` for `grid`, evaluating only samples not yet folded
    /// into the running sum. A changed grid triggers a full re-evaluation.
    /// Returns the number of samples evaluated and whether the cache was
    /// rebuilt.
    pub fn refresh_mean(&mut self, grid: &SmoothedIndicatorGrid, kernel: &SmoothingPolynomial) -> Result<(usize, bool)> {
        if self.is_empty() {
            return Err(Error::EmptyLevel(self.level));
        }
        let rebuilt = !matches!(&self.cache, Some(c) if &c.grid == grid);
        if rebuilt {
            self.cache = Some(MeanCache {
                grid: grid.clone(),
                sum: vec![0.0; grid.len()],
                evaluated: 0,
            });
        }
        let cache = self.cache.as_ref().expect("cache initialised above");
        let from = cache.evaluated;
        let added = self.weighted_sum(grid, kernel, from, 1.0);
        let cache = self.cache.as_mut().expect("cache initialised above");
        for (s, a) in cache.sum.iter_mut().zip(added) {
            *s += a;
        }
        cache.evaluated = self.fine.len();
        let n = self.fine.len() as f64;
        self.bhat = Some(cache.sum.iter().map(|s| s / n).collect());
        Ok((self.fine.len() - from, rebuilt))
    }

    /// Subsample size `min(N, max(zeta, N M^l) / k)`, rounded down and
    /// clamped to `[1, N]`.
    pub fn variance_subsample(&self, zeta: f64, k: usize, cost_per_sample: f64) -> usize {
        let n = self.len() as f64;
        let raw = n.min(zeta.max(n * cost_per_sample) / k as f64).floor();
        (raw.max(1.0) as usize).min(self.len().max(1))
    }

    /// Max-norm variance over the first `N'` samples; needs a current `bhat`.
    /// Charges `N' * k` units to the variance category and stores the result.
    pub fn estimate_variance(
        &mut self,
        grid: &SmoothedIndicatorGrid,
        kernel: &SmoothingPolynomial,
        zeta: f64,
        cost_per_sample: f64,
        ledger: &mut CostLedger,
    ) -> Result<(f64, usize)> {
        if self.is_empty() {
            return Err(Error::EmptyLevel(self.level));
        }
        let bhat = match &self.bhat {
            Some(b) if b.len() == grid.len() => b.clone(),
            _ => self.estimate_mean(grid, kernel)?,
        };
        let k = grid.len();
        let nprime = self.variance_subsample(zeta, k, cost_per_sample);
        let level = self.level;
        let (fine, coarse) = (&self.fine, &self.coarse);
        let per_sample: Vec<f64> = (0..nprime)
            .into_par_iter()
            .with_min_len(256)
            .map_init(
                || (vec![0.0; k], vec![0.0; k]),
                |(gf, gc), i| {
                    grid.eval_into(kernel, fine[i], gf);
                    if level > 0 {
                        grid.eval_into(kernel, coarse[i], gc);
                    }
                    let mut m: f64 = 0.0;
                    for j in 0..k {
                        let d = if level > 0 { gf[j] - gc[j] } else { gf[j] };
                        m = m.max((d - bhat[j]).abs());
                    }
                    m * m
                },
            )
            .collect();
        let vhat = per_sample.iter().sum::<f64>() / nprime as f64;
        if !vhat.is_finite() {
            return Err(Error::NonFinite(format!("variance estimate on level {level}")));
        }
        ledger.variance += (nprime * k) as f64;
        self.vhat = Some(vhat);
        self.nprime = nprime;
        Ok((vhat, nprime))
    }
}

pub fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `gamma^2(k) = ln(k + 1) + sqrt(8 / pi) sum_{j=2}^{k+1} 1 / (sqrt(ln j) j^2)`.
pub fn type2_gamma_sq(k: usize) -> f64 {
    let tail: f64 = (2..=k + 1)
        .map(|j| {
            let jf = j as f64;
            1.0 / (jf.ln().sqrt() * jf * jf)
        })
        .sum();
    ((k + 1) as f64).ln() + (8.0 / std::f64::consts::PI).sqrt() * tail
}

/// Constant `c(k) = sqrt(2 pi) gamma(k)` of the max-norm variance inequality
/// for sums of independent `R^k`-valued random vectors.
pub fn type2_constant(k: usize) -> f64 {
    (2.0 * std::f64::consts::PI).sqrt() * type2_gamma_sq(k).sqrt()
}

/// `c(k) * sum_l vhat_l / n_l`.
pub fn variance_bound(vhats: &[f64], replications: &[f64], k: usize) -> f64 {
    type2_constant(k)
        * vhats
            .iter()
            .zip(replications)
            .map(|(v, n)| v / n)
            .sum::<f64>()
}

/// Unrounded minimiser of `sum n_l (M^l + k delta)` subject to
/// `variance_bound(n) <= 256 eps_star^2`.
pub fn optimal_replications_real(vhats: &[f64], k: usize, delta: f64, m: u32, eps_star: f64) -> Vec<f64> {
    let unit: Vec<f64> = (0..vhats.len())
        .map(|l| (m as f64).powi(l as i32) + k as f64 * delta)
        .collect();
    let total: f64 = vhats
        .iter()
        .zip(&unit)
        .map(|(v, c)| (v * c).sqrt())
        .sum();
    let scale = type2_constant(k) / (256.0 * eps_star * eps_star);
    vhats
        .iter()
        .zip(&unit)
        .map(|(v, c)| (v / c).sqrt() * total * scale)
        .collect()
}

/// Replication targets: ceiling of the optimal values, at least 100.
pub fn optimal_replications(vhats: &[f64], k: usize, delta: f64, m: u32, eps_star: f64) -> Vec<usize> {
    optimal_replications_real(vhats, k, delta, m, eps_star)
        .into_iter()
        .map(|n| {
            if n.is_finite() && n > MIN_REPLICATIONS as f64 {
                n.ceil() as usize
            } else {
                MIN_REPLICATIONS
            }
        })
        .collect()
}

/// Cost bound `k + sum_l N_l (M^l + k delta)` with constant one.
pub fn compute_cost(k: usize, delta: f64, replications: &[usize], m: u32) -> f64 {
    k as f64
        + replications
            .iter()
            .enumerate()
            .map(|(l, &n)| n as f64 * ((m as f64).powi(l as i32) + k as f64 * delta))
            .sum::<f64>()
}

/// The multilevel vector estimate `sum_l (1/N_l) sum_i (g(y_fine) - g(y_coarse))`
/// accumulated over the concatenated weighted point set.
pub fn assemble_estimate(levels: &[LevelState], grid: &SmoothedIndicatorGrid, kernel: &SmoothingPolynomial) -> Result<Vec<f64>> {
    let mut out = vec![0.0; grid.len()];
    for lvl in levels {
        if lvl.is_empty() {
            return Err(Error::EmptyLevel(lvl.level));
        }
        let part = lvl.weighted_sum(grid, kernel, 0, 1.0 / lvl.len() as f64);
        for (o, p) in out.iter_mut().zip(part) {
            *o += p;
        }
    }
    Ok(out)
}

/// Assembles the estimate on `knots` with smoothing width `delta` and turns
/// it into a monotone distribution function.
pub fn assemble_cdf(levels: &[LevelState], knots: &KnotGrid, kernel: &SmoothingPolynomial, delta: f64) -> Result<MonotoneCdf> {
    let grid = knots.indicator_grid(delta)?;
    let values = assemble_estimate(levels, &grid, kernel)?;
    MonotoneCdf::from_values(knots, &values)
}

/// Level statistics as CSV: `level,N,Nprime,bhat_maxnorm,vhat,cost`.
pub fn level_stats_csv(levels: &[LevelState], m: u32) -> String {
    let mut out = String::from("level,N,Nprime,bhat_maxnorm,vhat,cost\n");
    for l in levels {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            l.level,
            l.len(),
            l.nprime,
            l.bhat_maxnorm(),
            l.vhat.unwrap_or(f64::NAN),
            l.len() as f64 * (m as f64).powi(l.level as i32)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Shift;
    impl CoupledSampler for Shift {
        fn refinement(&self) -> u32 {
            2
        }
        fn sample_base(&self, rng: &mut SampleRng) -> f64 {
            use rand::Rng;
            rng.random::<f64>()
        }
        fn sample_pair(&self, level: usize, rng: &mut SampleRng) -> (f64, f64) {
            let u = self.sample_base(rng);
            (u + 0.5f64.powi(level as i32), u + 0.5f64.powi(level as i32 - 1))
        }
    }

    #[test]
    fn extend_charges_path_cost() {
        let mut ledger = CostLedger::default();
        let mut lvl = LevelState::new(3, 1);
        lvl.extend(&Shift, 0, &mut ledger);
        assert_eq!(lvl.len(), 0);
        assert_eq!(ledger.total(), 0.0);
        lvl.extend(&Shift, 100, &mut ledger);
        assert_eq!(ledger.paths, 800.0);
        let mut l0 = LevelState::new(0, 1);
        l0.extend(&Shift, 100, &mut ledger);
        assert_eq!(ledger.paths, 900.0);
        assert!(l0.coarse().is_empty());
    }

    #[test]
    fn extension_is_prefix_stable() {
        let mut ledger = CostLedger::default();
        let mut a = LevelState::new(2, 9);
        a.extend(&Shift, 150, &mut ledger);
        let mut b = LevelState::new(2, 9);
        b.extend(&Shift, 100, &mut ledger);
        b.extend(&Shift, 50, &mut ledger);
        assert_eq!(a.fine(), b.fine());
        assert_eq!(a.coarse(), b.coarse());
    }

    #[test]
    fn perfect_coupling_has_zero_mean() {
        let kern = SmoothingPolynomial::build(3).unwrap();
        let grid = SmoothedIndicatorGrid::new(0.0, 1.0, 7, 0.2).unwrap();
        let y = vec![0.1, 0.5, 0.9];
        let lvl = LevelState::from_samples(2, y.clone(), y).unwrap();
        assert!(lvl.estimate_mean(&grid, &kern).unwrap().iter().all(|&b| b == 0.0));
        let empty = LevelState::new(1, 0);
        assert!(matches!(empty.estimate_mean(&grid, &kern), Err(Error::EmptyLevel(1))));
    }

    #[test]
    fn single_pair_mean() {
        let kern = SmoothingPolynomial::build(3).unwrap();
        let grid = SmoothedIndicatorGrid::new(0.4, 0.4, 1, 0.3).unwrap();
        let lvl = LevelState::from_samples(1, vec![0.5], vec![0.3]).unwrap();
        let b = lvl.estimate_mean(&grid, &kern).unwrap();
        let want = kern.eval((0.5 - 0.4) / 0.3) - kern.eval((0.3 - 0.4) / 0.3);
        assert!((b[0] - want).abs() < 1e-15);
    }

    #[test]
    fn subsample_size_formula() {
        let lvl = LevelState::from_samples(3, vec![0.0; 100], vec![0.0; 100]).unwrap();
        // min(100, max(50, 800) / 7) = 100
        assert_eq!(lvl.variance_subsample(50.0, 7, 8.0), 100);
        // min(100, max(50, 100) / 7) = 14.28 -> 14
        assert_eq!(lvl.variance_subsample(50.0, 7, 1.0), 14);
    }

    #[test]
    fn identical_samples_have_zero_variance() {
        let kern = SmoothingPolynomial::build(3).unwrap();
        let grid = SmoothedIndicatorGrid::new(0.0, 1.0, 7, 0.2).unwrap();
        let mut lvl = LevelState::from_samples(0, vec![0.3; 200], vec![]).unwrap();
        let mut ledger = CostLedger::default();
        let (v, np) = lvl.estimate_variance(&grid, &kern, 1e9, 1.0, &mut ledger).unwrap();
        assert!(v < 1e-28);
        assert_eq!(np, 200);
        assert_eq!(ledger.variance, 1400.0);
    }

    #[test]
    fn type2_constant_at_one() {
        let g2 = 2f64.ln() + (8.0 / std::f64::consts::PI).sqrt() / (2f64.ln().sqrt() * 4.0);
        assert!((type2_gamma_sq(1) - g2).abs() < 1e-15);
        let c = (2.0 * std::f64::consts::PI).sqrt() * g2.sqrt();
        assert!((type2_constant(1) - c).abs() < 1e-15);
    }

    #[test]
    fn variance_bound_examples() {
        assert_eq!(variance_bound(&[0.0], &[100.0], 7), 0.0);
        let c1 = type2_constant(1);
        assert!((variance_bound(&[1.0, 1.0], &[1.0, 1.0], 1) - 2.0 * c1).abs() < 1e-15);
        let a = variance_bound(&[0.3, 0.1], &[10.0, 20.0], 5);
        let b = variance_bound(&[0.3, 0.1], &[20.0, 40.0], 5);
        assert!((a - 2.0 * b).abs() < 1e-15);
    }

    #[test]
    fn replication_targets() {
        assert_eq!(optimal_replications(&[0.0, 0.0, 0.0], 7, 0.25, 2, 1e-3), vec![100; 3]);
        let v = [0.2, 0.05, 0.01];
        let eps = 1e-3;
        let real = optimal_replications_real(&v, 7, 0.25, 2, eps);
        let bound = variance_bound(&v, &real, 7);
        assert!((bound - 256.0 * eps * eps).abs() < 1e-12 * bound);
        let one = optimal_replications(&[0.2], 7, 0.25, 2, eps);
        let want = (0.2 * type2_constant(7) / (256.0 * eps * eps)).ceil() as usize;
        assert_eq!(one, vec![want]);
    }

    #[test]
    fn cost_formula() {
        assert!((compute_cost(7, 0.25, &[100], 2) - 282.0).abs() < 1e-12);
        assert_eq!(compute_cost(7, 0.0, &[100, 50], 2), 7.0 + 100.0 + 100.0);
    }
}
