//! The adaptive algorithm: nested interpolation, smoothing, bias and
//! variance loops that pick `k_n`, `delta_m`, the finest level `L` and the
//! replication numbers for a target root mean squared error `eps`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::{lebesgue_constant, sup_distance_on, KnotGrid, MonotoneCdf};
use crate::kernel::{AccumulateBuffer, SmoothedIndicatorGrid, SmoothingPolynomial};
use crate::mlmc::{
    max_norm, optimal_replications, variance_bound, CostLedger, CoupledSampler, LevelState, MIN_REPLICATIONS,
};
use crate::stats::decay_order;

/// Error budget derived from the target accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyBudget {
    pub eps: f64,
    pub q_norm: f64,
    pub eps_star: f64,
    pub r: usize,
    pub c_r: f64,
}

impl AccuracyBudget {
    /// Budget with the exact Lebesgue constant of degree-`r` interpolation.
    pub fn new(eps: f64, r: usize) -> Result<Self> {
        Self::with_q_norm(eps, r, lebesgue_constant(r))
    }

    pub fn with_q_norm(eps: f64, r: usize, q_norm: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::InvalidParameter(format!("accuracy must be positive, got {eps}")));
        }
        if !(q_norm >= 1.0) || !q_norm.is_finite() {
            return Err(Error::InvalidParameter(format!("interpolation norm must be >= 1, got {q_norm}")));
        }
        let eps_star = eps / (37.0 * q_norm);
        let b = Self {
            eps,
            q_norm,
            eps_star,
            r,
            c_r: 2f64.powi(r as i32 + 1),
        };
        let total = b.e1() + q_norm * (b.e2() + std::f64::consts::SQRT_2 * (b.e3().powi(2) + b.e4()).sqrt());
        if (total - eps).abs() > 1e-12 * eps {
            return Err(Error::InvalidParameter(format!(
                "error budget does not add up: {total} vs {eps}"
            )));
        }
        Ok(b)
    }

    /// Interpolation error target.
    pub fn e1(&self) -> f64 {
        self.q_norm * self.eps_star
    }

    /// Smoothing error target.
    pub fn e2(&self) -> f64 {
        4.0 * self.eps_star
    }

    /// Bias target.
    pub fn e3(&self) -> f64 {
        16.0 * self.eps_star
    }

    /// Variance target.
    pub fn e4(&self) -> f64 {
        256.0 * self.eps_star * self.eps_star
    }

    pub fn bias_threshold(&self, alpha: f64, m: u32) -> f64 {
        16.0 * ((m as f64).powf(alpha) - 1.0) * self.eps_star
    }

    pub fn smoothing_threshold(&self) -> f64 {
        4.0 * (self.c_r - 1.0) * self.eps_star
    }

    pub fn interpolation_threshold(&self) -> f64 {
        self.q_norm * (self.c_r - 1.0) * self.eps_star
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    /// Kernel order and interpolation degree.
    pub r: usize,
    pub interval: (f64, f64),
    pub seed: u64,
    pub level_cap: usize,
    pub iteration_cap: usize,
    /// Replication threshold for levels entering the weak-rate regression.
    pub regression_threshold: usize,
    pub alpha_floor: f64,
    /// Overrides the exact Lebesgue constant.
    pub q_norm: Option<f64>,
}

impl AdaptiveConfig {
    pub fn new(interval: (f64, f64), seed: u64) -> Self {
        Self {
            r: 3,
            interval,
            seed,
            level_cap: 25,
            iteration_cap: 30,
            regression_threshold: 10_000,
            alpha_floor: 0.1,
            q_norm: None,
        }
    }

    pub fn budget(&self, eps: f64) -> Result<AccuracyBudget> {
        match self.q_norm {
            Some(q) => AccuracyBudget::with_q_norm(eps, self.r, q),
            None => AccuracyBudget::new(eps, self.r),
        }
    }
}

/// Final statistics of one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: usize,
    pub n: usize,
    pub nprime: usize,
    pub bhat_maxnorm: f64,
    pub vhat: f64,
}

/// A constraint value, its threshold and whether it held at termination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub value: f64,
    pub threshold: f64,
    pub satisfied: bool,
}

impl Check {
    fn new(value: f64, threshold: f64) -> Self {
        Self {
            value,
            threshold,
            satisfied: value <= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub eps: f64,
    pub budget: AccuracyBudget,
    pub seed: u64,
    pub n: u32,
    pub m: u32,
    pub k_n: usize,
    pub delta: f64,
    #[serde(rename = "L")]
    pub max_level: usize,
    pub replications: Vec<usize>,
    pub alpha_hat: f64,
    pub levels: Vec<LevelSummary>,
    pub ledger: CostLedger,
    pub cost: f64,
    pub variance: Check,
    pub bias: Check,
    pub smoothing: Check,
    pub interpolation: Check,
    pub cdf: MonotoneCdf,
}

/// Least-squares weak rate from `(l, |bhat_l|)` pairs with `l >= 1`.
///
/// Levels with at least `threshold` replications are used; with fewer than
/// two of them every level with a nonzero mean is used; with fewer than two
/// still, the rate is 1. The result is at least `floor`.
pub fn regress_alpha(points: &[(usize, usize, f64)], m: u32, threshold: usize, floor: f64) -> f64 {
    let fit = |sel: Vec<(usize, f64)>| -> Option<f64> {
        if sel.len() < 2 {
            return None;
        }
        let x: Vec<f64> = sel.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = sel.iter().map(|p| p.1).collect();
        decay_order(&x, &y, m as f64)
    };
    let usable = |p: &&(usize, usize, f64)| p.0 >= 1 && p.2 > 0.0 && p.2.is_finite();
    let primary = points
        .iter()
        .filter(usable)
        .filter(|p| p.1 >= threshold)
        .map(|p| (p.0, p.2))
        .collect();
    let alpha = fit(primary)
        .or_else(|| fit(points.iter().filter(usable).map(|p| (p.0, p.2)).collect()))
        .unwrap_or(1.0);
    if alpha.is_finite() {
        alpha.max(floor)
    } else {
        1.0
    }
}

/// `max(|b_L|, |b_{L-1}| / M^a)` for `L = 2`, one more term for `L >= 3`.
/// `norms[l]` is `|bhat_l|`.
pub fn bias_bound(norms: &[f64], alpha: f64, m: u32) -> f64 {
    let l = norms.len().saturating_sub(1);
    let ma = (m as f64).powf(alpha);
    let terms = if l >= 3 { 3 } else { l.min(2) };
    (0..terms.max(1))
        .map(|i| norms[l - i] / ma.powi(i as i32))
        .fold(0.0, f64::max)
}

pub fn bias_check(norms: &[f64], alpha: f64, m: u32, budget: &AccuracyBudget) -> Check {
    Check::new(bias_bound(norms, alpha, m), budget.bias_threshold(alpha, m))
}

/// Sample mean of `g(y_i)` over `ys` on `grid`.
pub fn sample_mean(ys: &[f64], grid: &SmoothedIndicatorGrid, kernel: &SmoothingPolynomial) -> Vec<f64> {
    let w = 1.0 / ys.len().max(1) as f64;
    let mut buf = AccumulateBuffer::new(grid.len());
    grid.accumulate_into(kernel, ys.iter().map(|&y| (w, y)), &mut buf);
    buf.finish().0
}

/// Max-norm difference of the sample means for two smoothing widths.
pub fn smoothing_check(
    ys: &[f64],
    grid: &SmoothedIndicatorGrid,
    coarser_delta: f64,
    kernel: &SmoothingPolynomial,
    budget: &AccuracyBudget,
) -> Result<Check> {
    let a = sample_mean(ys, grid, kernel);
    let b = sample_mean(ys, &grid.with_delta(coarser_delta)?, kernel);
    let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    Ok(Check::new(max_norm(&diff), budget.smoothing_threshold()))
}

/// Sup distance between the corrected interpolants of the sample means on
/// the grids `fine` and `coarse`.
pub fn interpolation_check(
    ys: &[f64],
    fine: &KnotGrid,
    coarse: &KnotGrid,
    delta: f64,
    kernel: &SmoothingPolynomial,
    budget: &AccuracyBudget,
) -> Result<Check> {
    let qf = MonotoneCdf::from_values(fine, &sample_mean(ys, &fine.indicator_grid(delta)?, kernel))?;
    let qc = MonotoneCdf::from_values(coarse, &sample_mean(ys, &coarse.indicator_grid(delta)?, kernel))?;
    let mut mesh = fine.mesh(64);
    mesh.extend(coarse.knots());
    let value = sup_distance_on(|s| qf.eval(s), |s| qc.eval(s), &mesh);
    Ok(Check::new(value, budget.interpolation_threshold()))
}

struct Controller<'a> {
    sampler: &'a dyn CoupledSampler,
    cfg: &'a AdaptiveConfig,
    budget: AccuracyBudget,
    kernel: SmoothingPolynomial,
    levels: Vec<LevelState>,
    ledger: CostLedger,
    n: u32,
    m: u32,
    alpha: f64,
}

impl<'a> Controller<'a> {
    fn refinement(&self) -> u32 {
        self.sampler.refinement()
    }

    fn delta(&self, m: u32) -> f64 {
        let (s0, s1) = self.cfg.interval;
        (s1 - s0) / 2f64.powi(m as i32)
    }

    fn knots(&self, n: u32) -> Result<KnotGrid> {
        let (s0, s1) = self.cfg.interval;
        KnotGrid::for_refinement(n, self.cfg.r, s0, s1)
    }

    fn grid(&self) -> Result<SmoothedIndicatorGrid> {
        self.knots(self.n)?.indicator_grid(self.delta(self.m))
    }

    fn replications(&self) -> Vec<usize> {
        self.levels.iter().map(LevelState::len).collect()
    }

    fn unit_cost(&self, level: usize) -> f64 {
        self.sampler.cost(level)
    }

    /// Evaluation cost `max(k delta, 1)` per sample.
    fn eval_factor(&self, k: usize, delta: f64) -> f64 {
        (k as f64 * delta).max(1.0)
    }

    /// Brings means and variances of all levels up to date for the current
    /// grid.
    fn update_estimates(&mut self) -> Result<()> {
        let grid = self.grid()?;
        let k = grid.len();
        let factor = self.eval_factor(k, grid.delta());
        let mut changed = Vec::new();
        let (mut fresh, mut redone) = (0usize, 0usize);
        let mut rebuilt_any = false;
        for lvl in &mut self.levels {
            let (count, rebuilt) = lvl.refresh_mean(&grid, &self.kernel)?;
            if rebuilt && lvl.vhat().is_some() {
                rebuilt_any = true;
                redone += count;
            } else {
                fresh += count;
            }
            if count > 0 {
                changed.push(lvl.level());
            }
        }
        if rebuilt_any {
            self.ledger.reevaluation += k as f64 + factor * redone as f64;
        }
        if fresh > 0 {
            self.ledger.evaluations += k as f64 + factor * fresh as f64;
        }

        let l_max = self.levels.len() - 1;
        let cost: f64 = self
            .levels
            .iter()
            .map(|l| l.len() as f64 * (self.unit_cost(l.level()) + k as f64 * grid.delta()))
            .sum();
        let zeta = (k as f64 + cost) / l_max.max(1) as f64;
        for l in changed {
            let unit = self.unit_cost(l);
            self.levels[l].estimate_variance(&grid, &self.kernel, zeta, unit, &mut self.ledger)?;
        }
        Ok(())
    }

    fn vhats(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.vhat().unwrap_or(0.0)).collect()
    }

    fn variance_value(&self) -> f64 {
        let n: Vec<f64> = self.replications().iter().map(|&n| n as f64).collect();
        variance_bound(&self.vhats(), &n, self.grid().map(|g| g.len()).unwrap_or(1))
    }

    fn variance_loop(&mut self) -> Result<Check> {
        self.update_estimates()?;
        let k = self.grid()?.len();
        let delta = self.delta(self.m);
        for _ in 0..self.cfg.iteration_cap {
            let targets = optimal_replications(&self.vhats(), k, delta, self.refinement(), self.budget.eps_star);
            for (lvl, &t) in self.levels.iter_mut().zip(&targets) {
                let extra = t.saturating_sub(lvl.len());
                lvl.extend(self.sampler, extra, &mut self.ledger);
            }
            self.update_estimates()?;
            let check = Check::new(self.variance_value(), self.budget.e4());
            if !check.value.is_finite() {
                return Err(Error::NonFinite("variance bound".into()));
            }
            if check.satisfied {
                return Ok(check);
            }
        }
        Err(Error::IterationCap {
            stage: "variance",
            cap: self.cfg.iteration_cap,
        })
    }

    fn add_level(&mut self) -> Result<()> {
        let next = self.levels.len();
        if next > self.cfg.level_cap {
            return Err(Error::LevelCapExceeded {
                cap: self.cfg.level_cap,
            });
        }
        let mut lvl = LevelState::new(next, self.cfg.seed);
        lvl.extend(self.sampler, MIN_REPLICATIONS, &mut self.ledger);
        self.levels.push(lvl);
        Ok(())
    }

    fn norms(&self) -> Vec<f64> {
        self.levels.iter().map(LevelState::bhat_maxnorm).collect()
    }

    fn bias_loop(&mut self) -> Result<(Check, Check)> {
        let mut newlevel = false;
        for _ in 0..self.cfg.iteration_cap {
            if newlevel {
                self.add_level()?;
            }
            let variance = self.variance_loop()?;
            let points: Vec<(usize, usize, f64)> = self
                .levels
                .iter()
                .map(|l| (l.level(), l.len(), l.bhat_maxnorm()))
                .collect();
            self.alpha = regress_alpha(
                &points,
                self.refinement(),
                self.cfg.regression_threshold,
                self.cfg.alpha_floor,
            );
            let bias = bias_check(&self.norms(), self.alpha, self.refinement(), &self.budget);
            newlevel = true;
            if bias.satisfied {
                return Ok((variance, bias));
            }
        }
        Err(Error::IterationCap {
            stage: "bias",
            cap: self.cfg.iteration_cap,
        })
    }

    fn finest_samples(&self) -> &[f64] {
        self.levels.last().expect("at least three levels").fine()
    }

    fn charge_fine_evaluation(&mut self, k: usize, delta: f64) {
        let n = self.finest_samples().len() as f64;
        self.ledger.reevaluation += k as f64 + self.eval_factor(k, delta) * n;
    }

    fn smoothing_loop(&mut self) -> Result<(Check, Check, Check)> {
        for _ in 0..self.cfg.iteration_cap {
            self.m += 1;
            let (variance, bias) = self.bias_loop()?;
            let grid = self.grid()?;
            let coarser = self.delta(self.m - 1);
            let smoothing = smoothing_check(self.finest_samples(), &grid, coarser, &self.kernel, &self.budget)?;
            self.charge_fine_evaluation(grid.len(), grid.delta());
            self.charge_fine_evaluation(grid.len(), coarser);
            if smoothing.satisfied {
                return Ok((variance, bias, smoothing));
            }
        }
        Err(Error::IterationCap {
            stage: "smoothing",
            cap: self.cfg.iteration_cap,
        })
    }

    fn run(mut self) -> Result<(MonotoneCdf, RunReport)> {
        for l in 0..=2 {
            let mut lvl = LevelState::new(l, self.cfg.seed);
            lvl.extend(self.sampler, MIN_REPLICATIONS, &mut self.ledger);
            self.levels.push(lvl);
        }
        self.update_estimates()?;

        for _ in 0..self.cfg.iteration_cap {
            self.n += 1;
            self.m -= 1;
            let (variance, bias, smoothing) = self.smoothing_loop()?;
            let fine = self.knots(self.n)?;
            let coarse = self.knots(self.n - 1)?;
            let delta = self.delta(self.m);
            let interpolation =
                interpolation_check(self.finest_samples(), &fine, &coarse, delta, &self.kernel, &self.budget)?;
            self.charge_fine_evaluation(fine.len(), delta);
            self.charge_fine_evaluation(coarse.len(), delta);
            if interpolation.satisfied {
                return self.finish(variance, bias, smoothing, interpolation);
            }
        }
        Err(Error::IterationCap {
            stage: "interpolation",
            cap: self.cfg.iteration_cap,
        })
    }

    fn finish(self, variance: Check, bias: Check, smoothing: Check, interpolation: Check) -> Result<(MonotoneCdf, RunReport)> {
        let knots = self.knots(self.n)?;
        let k = knots.len();
        let mut estimate = vec![0.0; k];
        for lvl in &self.levels {
            let b = lvl.bhat().ok_or(Error::EmptyLevel(lvl.level()))?;
            for (e, x) in estimate.iter_mut().zip(b) {
                *e += x;
            }
        }
        if estimate.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("final estimate".into()));
        }
        let cdf = MonotoneCdf::from_values(&knots, &estimate)?;
        let levels = self
            .levels
            .iter()
            .map(|l| LevelSummary {
                level: l.level(),
                n: l.len(),
                nprime: l.nprime(),
                bhat_maxnorm: l.bhat_maxnorm(),
                vhat: l.vhat().unwrap_or(f64::NAN),
            })
            .collect();
        let report = RunReport {
            eps: self.budget.eps,
            budget: self.budget,
            seed: self.cfg.seed,
            n: self.n,
            m: self.m,
            k_n: k,
            delta: self.delta(self.m),
            max_level: self.levels.len() - 1,
            replications: self.replications(),
            alpha_hat: self.alpha,
            levels,
            ledger: self.ledger,
            cost: self.ledger.total(),
            variance,
            bias,
            smoothing,
            interpolation,
            cdf: cdf.clone(),
        };
        Ok((cdf, report))
    }
}

/// Runs the adaptive algorithm for accuracy `eps`.
pub fn run(eps: f64, sampler: &dyn CoupledSampler, cfg: &AdaptiveConfig) -> Result<(MonotoneCdf, RunReport)> {
    let budget = cfg.budget(eps)?;
    let (s0, s1) = cfg.interval;
    if !(s0 < s1) {
        return Err(Error::InvalidParameter(format!("need S0 < S1, got [{s0}, {s1}]")));
    }
    if cfg.r == 0 {
        return Err(Error::InvalidParameter("r must be >= 1".into()));
    }
    let controller = Controller {
        sampler,
        cfg,
        budget,
        kernel: SmoothingPolynomial::build(cfg.r)?,
        levels: Vec::new(),
        ledger: CostLedger::default(),
        n: 1,
        m: 2,
        alpha: 1.0,
    };
    controller.run()
}
