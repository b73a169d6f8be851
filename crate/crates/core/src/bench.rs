//! Experiment drivers: coupled mean and variance decay, repeated adaptive
//! runs with sup-norm errors against the exact distribution function, the
//! single-level cost baseline and the resulting computational gain.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{self, AdaptiveConfig, RunReport};
use crate::error::{Error, Result};
use crate::interp::MonotoneCdf;
use crate::kernel::{SmoothedIndicatorGrid, SmoothingPolynomial};
use crate::mlmc::{CostLedger, CoupledSampler, LevelState};
use crate::rng::derive_seed;
use crate::sde::{default_model, FunctionalKind, GbmParams, GbmSampler};
use crate::stats::decay_order;

/// Points of the equidistant grid on which sup-norm errors are measured.
pub const ERROR_GRID: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: String,
    pub params: GbmParams,
    pub kind: FunctionalKind,
    pub interval: (f64, f64),
    pub eps: Vec<f64>,
    pub repetitions: usize,
    pub seed: u64,
    /// Samples per level in decay studies.
    pub samples: usize,
    pub r: usize,
    pub out: PathBuf,
}

impl ExperimentConfig {
    /// Desk-scale defaults for one of `terminal`, `max`, `exit`.
    pub fn for_model(model: &str) -> Result<Self> {
        let (params, kind, interval) = default_model(model)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown model {model:?}")))?;
        Ok(Self {
            model: model.to_string(),
            params,
            kind,
            interval,
            eps: (3..=6).map(|i| 2f64.powi(-i)).collect(),
            repetitions: 20,
            seed: 42,
            samples: 100_000,
            r: 3,
            out: PathBuf::from("."),
        })
    }

    /// Full-size grid: `eps = 2^-3 .. 2^-9`, 100 repetitions, 10^6 samples.
    pub fn full_scale(mut self) -> Self {
        self.eps = (3..=9).map(|i| 2f64.powi(-i)).collect();
        self.repetitions = 100;
        self.samples = 1_000_000;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::InvalidParameter("repetitions must be >= 1".into()));
        }
        if let Some(e) = self.eps.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return Err(Error::InvalidParameter(format!("accuracy {e} not in (0, 1)")));
        }
        if !(self.interval.0 < self.interval.1) {
            return Err(Error::InvalidParameter("need S0 < S1".into()));
        }
        Ok(())
    }

    pub fn sampler(&self) -> Result<GbmSampler> {
        GbmSampler::new(self.params, self.kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub level: usize,
    pub delta: f64,
    /// `|bhat_l|` in the max norm.
    pub mean: f64,
    /// Max-norm variance `vhat_l` over all samples.
    pub var: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecaySlope {
    pub delta: f64,
    pub mean_slope: f64,
    pub var_slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayStudy {
    pub rows: Vec<DecayRow>,
    pub slopes: Vec<DecaySlope>,
    pub fit_levels: (usize, usize),
}

impl DecayStudy {
    pub fn slope(&self, delta: f64) -> Option<&DecaySlope> {
        self.slopes.iter().find(|s| s.delta == delta)
    }

    /// `level,delta,mean,var` rows followed by `slope,delta,mean_slope,var_slope`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,delta,mean,var\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.level, r.delta, r.mean, r.var);
        }
        for s in &self.slopes {
            let _ = writeln!(out, "slope,{},{},{}", s.delta, s.mean_slope, s.var_slope);
        }
        out
    }
}

/// Coupled mean and variance on levels `1..=max_level` for every smoothing
/// width, `k` knots on `interval`. The samples of a level are shared by all
/// widths. Slopes are fitted over `fit_levels` (inclusive).
pub fn decay_study(
    sampler: &dyn CoupledSampler,
    interval: (f64, f64),
    k: usize,
    deltas: &[f64],
    max_level: usize,
    fit_levels: (usize, usize),
    samples: usize,
    seed: u64,
) -> Result<DecayStudy> {
    if samples < 2 {
        return Err(Error::InvalidParameter("decay study needs at least 2 samples".into()));
    }
    let kernel = SmoothingPolynomial::build(3)?;
    let mut ledger = CostLedger::default();
    let mut rows = Vec::new();
    for level in 1..=max_level {
        let mut lvl = LevelState::new(level, derive_seed(seed, &[0xdeca]));
        lvl.extend(sampler, samples, &mut ledger);
        for &delta in deltas {
            let grid = SmoothedIndicatorGrid::new(interval.0, interval.1, k, delta)?;
            lvl.refresh_mean(&grid, &kernel)?;
            let (var, _) = lvl.estimate_variance(&grid, &kernel, f64::INFINITY, 1.0, &mut ledger)?;
            rows.push(DecayRow {
                level,
                delta,
                mean: lvl.bhat_maxnorm(),
                var,
            });
        }
    }
    let slopes = deltas
        .iter()
        .map(|&delta| {
            let sel: Vec<&DecayRow> = rows
                .iter()
                .filter(|r| r.delta == delta && r.level >= fit_levels.0 && r.level <= fit_levels.1)
                .collect();
            let x: Vec<f64> = sel.iter().map(|r| r.level as f64).collect();
            let m: Vec<f64> = sel.iter().map(|r| r.mean).collect();
            let v: Vec<f64> = sel.iter().map(|r| r.var).collect();
            let base = sampler.refinement() as f64;
            DecaySlope {
                delta,
                mean_slope: decay_order(&x, &m, base).unwrap_or(f64::NAN),
                var_slope: decay_order(&x, &v, base).unwrap_or(f64::NAN),
            }
        })
        .collect();
    Ok(DecayStudy {
        rows,
        slopes,
        fit_levels,
    })
}

/// Smoothing widths of the default decay study: `(S1 - S0) / 2^j` for
/// `j = 1, 2, 3`, and the plain indicator.
pub fn default_decay_deltas(interval: (f64, f64)) -> Vec<f64> {
    let w = interval.1 - interval.0;
    vec![w / 2.0, w / 4.0, w / 8.0, 0.0]
}

/// Weak order of the plain indicator, the mean slope at `delta = 0` over
/// levels 2 to 7 with 7 knots. Fed to the single-level baseline.
pub fn indicator_weak_order(
    sampler: &dyn CoupledSampler,
    interval: (f64, f64),
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let study = decay_study(sampler, interval, 7, &[0.0], 7, (2, 7), samples, seed)?;
    let alpha = study.slopes[0].mean_slope;
    if alpha.is_finite() && alpha > 0.0 {
        Ok(alpha)
    } else {
        Err(Error::InvalidParameter(format!("fitted weak order {alpha} is not positive")))
    }
}

/// `sup |F_est - F_true|` on `ERROR_GRID` equidistant points.
pub fn sup_error<F: Fn(f64) -> f64>(cdf: &MonotoneCdf, truth: F, interval: (f64, f64)) -> f64 {
    let (a, b) = interval;
    (0..ERROR_GRID)
        .map(|i| {
            let s = a + (b - a) * i as f64 / (ERROR_GRID - 1) as f64;
            (cdf.eval(s) - truth(s)).abs()
        })
        .fold(0.0, f64::max)
}

/// Outcome of one adaptive run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub eps: f64,
    pub rep: usize,
    pub seed: u64,
    pub sup_error: Option<f64>,
    pub report: Option<RunReport>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveRecord {
    pub eps: f64,
    pub rmse: f64,
    pub cost: f64,
    pub kn_mean: f64,
    pub inv_delta_mean: f64,
    pub runs: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveStudy {
    pub records: Vec<AdaptiveRecord>,
    pub runs: Vec<RunOutcome>,
}

impl AdaptiveStudy {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eps,rmse,cost,kn_mean,inv_delta_mean\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{},{}", r.eps, r.rmse, r.cost, r.kn_mean, r.inv_delta_mean);
        }
        out
    }
}

/// Seed of repetition `rep` at accuracy `eps`.
pub fn run_seed(seed: u64, eps: f64, rep: usize) -> u64 {
    derive_seed(seed, &[eps.to_bits(), rep as u64])
}

/// Repeated adaptive runs per accuracy, in parallel over `(eps, rep)`.
pub fn adaptive_study(cfg: &ExperimentConfig) -> Result<AdaptiveStudy> {
    cfg.validate()?;
    let sampler = cfg.sampler()?;
    let jobs: Vec<(f64, usize)> = cfg
        .eps
        .iter()
        .flat_map(|&e| (0..cfg.repetitions).map(move |rep| (e, rep)))
        .collect();
    let runs: Vec<RunOutcome> = jobs
        .par_iter()
        .map(|&(eps, rep)| {
            let seed = run_seed(cfg.seed, eps, rep);
            let mut acfg = AdaptiveConfig::new(cfg.interval, seed);
            acfg.r = cfg.r;
            match adaptive::run(eps, &sampler, &acfg) {
                Ok((cdf, report)) => {
                    let err = sup_error(&cdf, |s| sampler.exact_cdf(s).unwrap_or(f64::NAN), cfg.interval);
                    RunOutcome {
                        eps,
                        rep,
                        seed,
                        sup_error: Some(err),
                        report: Some(report),
                        failure: None,
                    }
                }
                Err(e) => RunOutcome {
                    eps,
                    rep,
                    seed,
                    sup_error: None,
                    report: None,
                    failure: Some(e.to_string()),
                },
            }
        })
        .collect();
    let records = cfg
        .eps
        .iter()
        .map(|&eps| {
            let ok: Vec<&RunOutcome> = runs.iter().filter(|r| r.eps == eps && r.report.is_some()).collect();
            let n = ok.len().max(1) as f64;
            let reports = ok.iter().filter_map(|r| r.report.as_ref());
            AdaptiveRecord {
                eps,
                rmse: (ok.iter().map(|r| r.sup_error.unwrap().powi(2)).sum::<f64>() / n).sqrt(),
                cost: reports.clone().map(|r| r.ledger.total()).sum::<f64>() / n,
                kn_mean: reports.clone().map(|r| r.k_n as f64).sum::<f64>() / n,
                inv_delta_mean: reports.map(|r| 1.0 / r.delta).sum::<f64>() / n,
                runs: ok.len(),
                failures: cfg.repetitions - ok.len(),
            }
        })
        .collect();
    Ok(AdaptiveStudy { records, runs })
}

/// Single-level baseline for accuracy `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleLevelCost {
    pub eps_star: f64,
    pub k_n: u64,
    pub replications: u64,
    pub cost: f64,
}

/// `log2(k_n) / (256 eps*^2) * (k_n + (16 eps*)^(-1 / alpha))` with
/// `eps* = eps / (33 Q)` and `k_n = (Q eps*)^(-1/4)`, both counts rounded.
pub fn single_level_cost(eps: f64, alpha: f64, q_norm: f64) -> Result<SingleLevelCost> {
    if !(eps > 0.0) || !(alpha > 0.0) || !(q_norm > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need positive eps, alpha and norm, got {eps}, {alpha}, {q_norm}"
        )));
    }
    let eps_star = eps / (33.0 * q_norm);
    let k_n = ((q_norm * eps_star).powf(-0.25).round() as u64).max(2);
    let replications = ((k_n as f64).log2() / (256.0 * eps_star * eps_star)).round() as u64;
    let cost = replications as f64 * (k_n as f64 + (16.0 * eps_star).powf(-1.0 / alpha));
    Ok(SingleLevelCost {
        eps_star,
        k_n,
        replications,
        cost,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainRecord {
    pub eps: f64,
    pub rmse: f64,
    pub cost_ml: f64,
    pub cost_sl: f64,
    pub gain: f64,
}

pub fn gain_records(study: &AdaptiveStudy, alpha: f64, q_norm: f64) -> Result<Vec<GainRecord>> {
    study
        .records
        .iter()
        .map(|r| {
            let sl = single_level_cost(r.eps, alpha, q_norm)?;
            Ok(GainRecord {
                eps: r.eps,
                rmse: r.rmse,
                cost_ml: r.cost,
                cost_sl: sl.cost,
                gain: sl.cost / r.cost,
            })
        })
        .collect()
}

pub fn gain_csv(records: &[GainRecord]) -> String {
    let mut out = String::from("eps,cost_sl,cost_ml,gain\n");
    for g in records {
        let _ = writeln!(out, "{},{},{},{}", g.eps, g.cost_sl, g.cost_ml, g.gain);
    }
    out
}

/// `s,F_true,F_est` on `points` equidistant points.
pub fn cdf_csv<F: Fn(f64) -> f64>(cdf: &MonotoneCdf, truth: F, interval: (f64, f64), points: usize) -> String {
    let mut out = String::from("s,F_true,F_est\n");
    let (a, b) = interval;
    let points = points.max(2);
    for i in 0..points {
        let s = a + (b - a) * i as f64 / (points - 1) as f64;
        let _ = writeln!(out, "{},{},{}", s, truth(s), cdf.eval(s));
    }
    out
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

/// Writes `adaptive.csv`, `report_<eps>_<rep>.json` for every successful run
/// and `cdf_<eps>.csv` from the first successful repetition.
pub fn write_adaptive_outputs(cfg: &ExperimentConfig, study: &AdaptiveStudy) -> Result<Vec<PathBuf>> {
    let sampler = cfg.sampler()?;
    let mut written = vec![write_file(&cfg.out, "adaptive.csv", &study.to_csv())?];
    for run in &study.runs {
        if let Some(rep) = &run.report {
            let json = serde_json::to_string_pretty(rep)?;
            written.push(write_file(&cfg.out, &format!("report_{}_{}.json", run.eps, run.rep), &json)?);
        }
    }
    for &eps in &cfg.eps {
        if let Some(rep) = study
            .runs
            .iter()
            .filter(|r| r.eps == eps)
            .find_map(|r| r.report.as_ref())
        {
            let csv = cdf_csv(&rep.cdf, |s| sampler.exact_cdf(s).unwrap_or(f64::NAN), cfg.interval, 1001);
            written.push(write_file(&cfg.out, &format!("cdf_{eps}.csv"), &csv)?);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_level_example() {
        let sl = single_level_cost(0.125, 1.0, 1.6305).unwrap();
        assert!((sl.eps_star - 0.125 / (33.0 * 1.6305)).abs() < 1e-18);
        assert!((sl.eps_star - 2.3231e-3).abs() < 1e-7);
        assert_eq!(sl.k_n, 4);
        let reps = (2.0 / (256.0 * sl.eps_star * sl.eps_star)).round() as u64;
        assert_eq!(sl.replications, reps);
        let want = reps as f64 * (4.0 + 1.0 / (16.0 * sl.eps_star));
        assert!((sl.cost - want).abs() < 1e-9 * want);
        let faster = single_level_cost(0.125, 2.0, 1.6305).unwrap();
        assert!(faster.cost < sl.cost);
    }

    #[test]
    fn configs() {
        let c = ExperimentConfig::for_model("max").unwrap();
        assert_eq!(c.interval, (1.05, 2.05));
        assert_eq!(c.eps.len(), 4);
        assert!(ExperimentConfig::for_model("asian").is_err());
        let p = c.full_scale();
        assert_eq!((p.eps.len(), p.repetitions, p.samples), (7, 100, 1_000_000));
    }

    #[test]
    fn csv_headers() {
        let s = DecayStudy {
            rows: vec![DecayRow { level: 1, delta: 0.25, mean: 0.1, var: 0.01 }],
            slopes: vec![DecaySlope { delta: 0.25, mean_slope: 1.0, var_slope: 2.0 }],
            fit_levels: (1, 1),
        };
        assert_eq!(s.to_csv(), "level,delta,mean,var\n1,0.25,0.1,0.01\nslope,0.25,1,2\n");
        assert_eq!(gain_csv(&[]), "eps,cost_sl,cost_ml,gain\n");
    }
}
