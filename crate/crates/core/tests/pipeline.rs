use mlcdf::adaptive::{self, AdaptiveConfig};
use mlcdf::bench::{self, sup_error};
use mlcdf::kernel::{SmoothedIndicatorGrid, SmoothingPolynomial};
use mlcdf::mlmc::{assemble_estimate, CostLedger, CoupledSampler, LevelState};
use mlcdf::rng::LevelStreams;
use mlcdf::sde::{default_model, ExactLaw, ExactSampler, GbmSampler};

fn gbm(model: &str) -> (GbmSampler, (f64, f64)) {
    let (p, k, iv) = default_model(model).unwrap();
    (GbmSampler::new(p, k).unwrap(), iv)
}

/// Mean and standard error of `1{y <= s}`.
fn proportion(ys: &[f64], s: f64) -> (f64, f64) {
    let n = ys.len() as f64;
    let p = ys.iter().filter(|&&y| y <= s).count() as f64 / n;
    (p, (p * (1.0 - p) / n).sqrt().max(1e-12))
}

#[test]
fn adaptive_run_on_exact_law_meets_accuracy() {
    let law = ExactLaw::Normal { mean: 1.0, sd: 0.3 };
    let sampler = ExactSampler { law };
    let interval = (0.5, 1.5);
    let eps = 0.05;
    let errors: Vec<f64> = (0..8)
        .map(|rep| {
            let (cdf, report) = adaptive::run(eps, &sampler, &AdaptiveConfig::new(interval, rep)).unwrap();
            assert!(report.variance.satisfied && report.bias.satisfied);
            assert!(report.smoothing.satisfied && report.interpolation.satisfied);
            assert!((report.cost - report.ledger.total()).abs() < 1e-9);
            sup_error(&cdf, |s| law.cdf(s), interval)
        })
        .collect();
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt();
    assert!(rmse <= eps, "rmse {rmse}");
}

#[test]
fn identical_seeds_give_identical_reports() {
    let (sampler, interval) = gbm("terminal");
    let cfg = AdaptiveConfig::new(interval, 9);
    let (_, a) = adaptive::run(0.1, &sampler, &cfg).unwrap();
    let (_, b) = adaptive::run(0.1, &sampler, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let (_, c) = adaptive::run(0.1, &sampler, &AdaptiveConfig::new(interval, 10)).unwrap();
    assert_ne!(a.replications, c.replications);
}

#[test]
fn telescoping_sum_is_unbiased_for_perfect_coupling() {
    let law = ExactLaw::Uniform { lo: 0.0, hi: 1.0 };
    let sampler = ExactSampler { law };
    let kernel = SmoothingPolynomial::build(3).unwrap();
    let grid = SmoothedIndicatorGrid::new(0.2, 0.8, 7, 0.1).unwrap();
    let mut ledger = CostLedger::default();
    let n = 40_000;
    let levels: Vec<LevelState> = (0..3)
        .map(|l| {
            let mut lvl = LevelState::new(l, 3);
            lvl.extend(&sampler, n, &mut ledger);
            lvl
        })
        .collect();
    let est = assemble_estimate(&levels, &grid, &kernel).unwrap();
    // the kernel preserves linear functions, so the smoothed uniform law is exact
    for (e, s) in est.iter().zip(grid.knots()) {
        let se = (s * (1.0 - s) / n as f64).sqrt();
        assert!((e - law.cdf(s)).abs() < 4.0 * se, "{e} vs {s}");
    }
}

#[test]
fn coarse_marginal_matches_previous_fine_marginal() {
    for model in ["terminal", "max", "exit"] {
        let (sampler, (s0, s1)) = gbm(model);
        let n = 60_000u64;
        for level in [2usize, 4] {
            let a = LevelStreams::new(1, level);
            let b = LevelStreams::new(2, level - 1);
            let coarse: Vec<f64> = (0..n).map(|i| sampler.sample_pair(level, &mut a.stream(i)).1).collect();
            let fine: Vec<f64> = (0..n).map(|i| sampler.sample_pair(level - 1, &mut b.stream(i)).0).collect();
            for s in [s0, 0.5 * (s0 + s1), s1] {
                let (p, sp) = proportion(&coarse, s);
                let (q, sq) = proportion(&fine, s);
                let z = (p - q).abs() / (sp * sp + sq * sq).sqrt();
                assert!(z < 4.0, "{model} level {level} s {s}: {p} vs {q}");
            }
        }
    }
}

#[test]
fn exit_law_matches_fine_grid_simulation() {
    let (sampler, (s0, s1)) = gbm("exit");
    let n = 200_000u64;
    let streams = LevelStreams::new(11, 10);
    let ys: Vec<f64> = (0..n).map(|i| sampler.sample_pair(10, &mut streams.stream(i)).0).collect();
    for s in [s0, 0.75, s1] {
        let (p, se) = proportion(&ys, s);
        let exact = sampler.exact_cdf(s).unwrap();
        // the right endpoint of the crossing step delays exits by at most 2^-9
        assert!((p - exact).abs() < 3.0 * se + 2e-3, "s {s}: {p} vs {exact}");
    }
}

#[test]
fn terminal_and_max_laws_match_fine_grid_simulation() {
    for model in ["terminal", "max"] {
        let (sampler, (s0, s1)) = gbm(model);
        let n = 100_000u64;
        let streams = LevelStreams::new(12, 8);
        let ys: Vec<f64> = (0..n).map(|i| sampler.sample_pair(8, &mut streams.stream(i)).0).collect();
        for s in [s0 + 0.25, 0.5 * (s0 + s1), s1 - 0.25] {
            let (p, se) = proportion(&ys, s);
            let exact = sampler.exact_cdf(s).unwrap();
            let slack = if model == "max" { 0.03 } else { 0.0 };
            assert!((p - exact).abs() < 4.0 * se + slack, "{model} s {s}: {p} vs {exact}");
        }
    }
}

#[test]
fn decay_study_csv_layout() {
    let (sampler, interval) = gbm("terminal");
    let deltas = bench::default_decay_deltas(interval);
    let study = bench::decay_study(&sampler, interval, 7, &deltas, 4, (2, 4), 2_000, 1).unwrap();
    let csv = study.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("level,delta,mean,var"));
    assert_eq!(csv.lines().filter(|l| l.starts_with("slope,")).count(), deltas.len());
    assert_eq!(study.rows.len(), 4 * deltas.len());
    for w in study.rows.chunks(deltas.len()) {
        // smoothing lowers the coupled variance
        assert!(w[0].var < w[deltas.len() - 1].var);
    }
}
