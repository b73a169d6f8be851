use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mlcdf::bench::{self, ExperimentConfig};
use mlcdf::interp::lebesgue_constant;
use mlcdf::sde::{FunctionalKind, GbmParams};
use mlcdf::theory::{self, RateAssumptions};
use mlcdf::CoupledSampler;

#[derive(Parser)]
#[command(name = "mlcdf", version, about = "Adaptive multilevel Monte Carlo for distribution functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Coupled mean and variance decay per level and smoothing width.
    Decay(DecayArgs),
    /// Repeated adaptive runs: RMSE, cost, knots and smoothing width per accuracy.
    Adaptive(Common),
    /// Adaptive study plus the single-level baseline and the gain.
    Gain(GainArgs),
    /// Complexity exponents and the non-adaptive parameter plan.
    Theory(TheoryArgs),
    /// One adaptive run per accuracy, writing the estimated and exact curves.
    Cdf(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// terminal, max or exit
    #[arg(long, default_value = "terminal")]
    model: String,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long = "T")]
    horizon: Option<f64>,
    #[arg(long)]
    barrier: Option<f64>,
    #[arg(long)]
    s0: Option<f64>,
    #[arg(long)]
    s1: Option<f64>,
    /// Comma-separated accuracies.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Samples per level in decay studies.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Full-size grid of accuracies, repetitions and samples.
    #[arg(long)]
    full_scale: bool,
}

#[derive(Args)]
struct DecayArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 7)]
    knots: usize,
    #[arg(long, default_value_t = 7)]
    max_level: usize,
    #[arg(long, default_value_t = 2)]
    fit_from: usize,
    /// Comma-separated smoothing widths; 0 is always added.
    #[arg(long, value_delimiter = ',')]
    deltas: Option<Vec<f64>>,
}

#[derive(Args)]
struct GainArgs {
    #[command(flatten)]
    common: Common,
    /// Weak order for the single-level baseline; fitted from a decay study
    /// without smoothing if absent.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long, default_value_t = 0.0)]
    alpha1: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha2: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha3: f64,
    #[arg(long, default_value_t = 1.0)]
    beta4: f64,
    #[arg(long, default_value_t = 2.0)]
    beta5: f64,
    #[arg(long, default_value_t = 3)]
    r: usize,
    #[arg(long = "M", default_value_t = 2)]
    m: u32,
    /// Accuracies for the parameter plan.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
}

fn config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::for_model(&c.model)?;
    if c.full_scale {
        cfg = cfg.full_scale();
    }
    let GbmParams { mu, sigma, horizon } = cfg.params;
    cfg.params = GbmParams::new(
        c.mu.unwrap_or(mu),
        c.sigma.unwrap_or(sigma),
        c.horizon.unwrap_or(horizon),
    )?;
    match (&mut cfg.kind, c.barrier) {
        (FunctionalKind::ExitTime { barrier }, Some(b)) => *barrier = b,
        (_, Some(_)) => bail!("--barrier only applies to the exit model"),
        _ => {}
    }
    cfg.interval = (c.s0.unwrap_or(cfg.interval.0), c.s1.unwrap_or(cfg.interval.1));
    if let Some(eps) = &c.eps {
        cfg.eps = eps.clone();
    }
    if let Some(r) = c.reps {
        cfg.repetitions = r;
    }
    if let Some(n) = c.samples {
        cfg.samples = n;
    }
    cfg.seed = c.seed;
    cfg.out = c.out.clone();
    cfg.validate()?;
    cfg.sampler()?;
    Ok(cfg)
}

fn decay(args: &DecayArgs) -> Result<()> {
    let cfg = config(&args.common)?;
    let sampler = cfg.sampler()?;
    let mut deltas = args
        .deltas
        .clone()
        .unwrap_or_else(|| bench::default_decay_deltas(cfg.interval));
    deltas.retain(|d| *d != 0.0);
    deltas.push(0.0);
    let study = bench::decay_study(
        &sampler,
        cfg.interval,
        args.knots,
        &deltas,
        args.max_level,
        (args.fit_from, args.max_level),
        cfg.samples,
        cfg.seed,
    )?;
    let path = bench::write_file(&cfg.out, "decay.csv", &study.to_csv())?;
    for s in &study.slopes {
        println!("delta {:<8} mean slope {:.3}  variance slope {:.3}", s.delta, s.mean_slope, s.var_slope);
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn adaptive(c: &Common) -> Result<bench::AdaptiveStudy> {
    let cfg = config(c)?;
    let study = bench::adaptive_study(&cfg)?;
    let written = bench::write_adaptive_outputs(&cfg, &study)?;
    for r in &study.records {
        println!(
            "eps {:<10} rmse {:.3e}  cost {:.4e}  k {:.2}  1/delta {:.2}  failures {}",
            r.eps, r.rmse, r.cost, r.kn_mean, r.inv_delta_mean, r.failures
        );
    }
    for run in study.runs.iter().filter(|r| r.failure.is_some()) {
        eprintln!("eps {} rep {}: {}", run.eps, run.rep, run.failure.as_deref().unwrap_or(""));
    }
    println!("wrote {} files to {}", written.len(), cfg.out.display());
    Ok(study)
}

fn gain(args: &GainArgs) -> Result<()> {
    let cfg = config(&args.common)?;
    let alpha = match args.alpha {
        Some(a) => a,
        None => {
            let a = bench::indicator_weak_order(&cfg.sampler()?, cfg.interval, cfg.samples, cfg.seed)?;
            println!("fitted weak order {a:.4}");
            a
        }
    };
    let study = adaptive(&args.common)?;
    let records = bench::gain_records(&study, alpha, lebesgue_constant(cfg.r))?;
    let path = bench::write_file(&cfg.out, "gain.csv", &bench::gain_csv(&records))?;
    for g in &records {
        println!("eps {:<10} cost_sl {:.4e}  cost_ml {:.4e}  gain {:.3}", g.eps, g.cost_sl, g.cost_ml, g.gain);
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn theory_cmd(args: &TheoryArgs) -> Result<()> {
    let rates = RateAssumptions {
        alpha1: args.alpha1,
        alpha2: args.alpha2,
        alpha3: args.alpha3,
        beta4: args.beta4,
        beta5: args.beta5,
        r: args.r,
        m: args.m,
    };
    let order = theory::complexity_exponents(&rates)?;
    println!("{}", serde_json::to_string_pretty(&order)?);
    for &eps in args.eps.as_deref().unwrap_or(&[]) {
        let plan = theory::plan_parameters(&rates, eps)?;
        println!("{}", serde_json::to_string_pretty(&plan)?);
    }
    Ok(())
}

fn cdf(c: &Common) -> Result<()> {
    let mut c = c.clone();
    c.reps = Some(1);
    let cfg = config(&c)?;
    let sampler = cfg.sampler()?;
    for &eps in &cfg.eps {
        let mut acfg = mlcdf::AdaptiveConfig::new(cfg.interval, bench::run_seed(cfg.seed, eps, 0));
        acfg.r = cfg.r;
        let (est, report) = mlcdf::adaptive::run(eps, &sampler, &acfg)
            .with_context(|| format!("adaptive run at eps = {eps}"))?;
        let truth = |s: f64| sampler.exact_cdf(s).unwrap_or(f64::NAN);
        let csv = bench::cdf_csv(&est, truth, cfg.interval, 1001);
        let path = bench::write_file(&cfg.out, &format!("cdf_{eps}.csv"), &csv)?;
        bench::write_file(&cfg.out, &format!("report_{eps}_0.json"), &serde_json::to_string_pretty(&report)?)?;
        println!(
            "eps {:<10} sup error {:.3e}  cost {:.4e}  levels {}  M {}  wrote {}",
            eps,
            bench::sup_error(&est, truth, cfg.interval),
            report.ledger.total(),
            report.max_level + 1,
            sampler.refinement(),
            path.display()
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Decay(a) => decay(a),
        Command::Adaptive(c) => adaptive(c).map(|_| ()),
        Command::Gain(a) => gain(a),
        Command::Theory(a) => theory_cmd(a),
        Command::Cdf(c) => cdf(c),
    }
}
