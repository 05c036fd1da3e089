//! Command-line interface: dataset estimation, curve sweeps, robustness
//! search, simulation replications, and two-period sharp bounds. Every run
//! writes a manifest beside its outputs; `rerun` replays a manifest and
//! verifies the artifacts byte-for-byte.

mod ingest;
mod manifest;
mod output;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use incbounds::estimator::{
    curve, estimate_bounds, robustness_gamma, BoundEstimate, RobustnessReport,
};
use incbounds::nuisance::LearnerSpec;
use incbounds::oracle::AnalyticDgp;
use incbounds::sim::{
    bias_sweep, coverage_study, figure1_sweep, CoverageNuisances, SimConfig,
};
use incbounds::t2::{
    brute_force_bounds, check_compatibility, gformula_point, sharp_bounds_both, DiscreteT2Model,
    LambdaTables, RhoWeight, T2Options,
};
use incbounds::{Locality, ParamGrid};
use ingest::{load_csv, IngestReport, SchemaConfig};
use manifest::{read_manifest, sha256_file, ManifestBuilder};
use output::{bias_csv, coverage_csv, curve_csv, figure1_csv, fmt_f64, line_chart_svg, Series};
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "incbounds", version, about = "Sensitivity bounds for incremental interventions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bound estimate at one (delta, gamma) from a CSV dataset
    Estimate(EstimateArgs),
    /// Bound estimates over (delta, gamma) grids, as tidy CSV
    Curve(CurveArgs),
    /// Smallest gamma whose bounds admit a constant effect across deltas
    RobustnessGamma(RobustnessArgs),
    /// Replication studies on the analytic designs
    #[command(subcommand)]
    Simulate(SimulateCmd),
    /// Two-period sharp bounds on discrete models
    #[command(subcommand)]
    T2(T2Cmd),
    /// Re-execute a recorded manifest and verify the outputs byte-for-byte
    Rerun(RerunArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV file
    #[arg(long)]
    input: PathBuf,
    /// Outcome column name
    #[arg(long)]
    outcome: String,
    /// Treatment column name (values 0/1)
    #[arg(long)]
    treatment: String,
    /// Covariate column names, comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    covariates: Vec<String>,
    /// Token treated as missing (repeatable; default: empty cell and NA)
    #[arg(long = "missing-token")]
    missing_tokens: Vec<String>,
}

impl DataArgs {
    fn schema(&self) -> Result<SchemaConfig> {
        let mut schema = SchemaConfig::new(
            self.outcome.clone(),
            self.treatment.clone(),
            self.covariates.clone(),
        )?;
        if !self.missing_tokens.is_empty() {
            schema.missing_tokens = self.missing_tokens.clone();
        }
        Ok(schema)
    }

    fn argv(&self) -> Vec<String> {
        let mut v = vec![
            "--input".into(),
            self.input.display().to_string(),
            "--outcome".into(),
            self.outcome.clone(),
            "--treatment".into(),
            self.treatment.clone(),
            "--covariates".into(),
            self.covariates.join(","),
        ];
        for t in &self.missing_tokens {
            v.push("--missing-token".into());
            v.push(t.clone());
        }
        v
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LearnerArg {
    /// Linear/logistic basis learners with the asymmetric-loss bound fit
    Basis,
    /// Local-kernel learners throughout
    Kernel,
}

#[derive(Args)]
struct FitArgs {
    /// Number of cross-fitting folds
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.95)]
    ci_level: f64,
    #[arg(long, value_enum, default_value_t = LearnerArg::Basis)]
    learner: LearnerArg,
    /// Kernel bandwidth scale (local-kernel learners)
    #[arg(long)]
    bandwidth: Option<f64>,
    /// k-nearest-neighbor localization instead of a kernel
    #[arg(long)]
    knn: Option<usize>,
}

impl FitArgs {
    fn spec(&self) -> Result<LearnerSpec> {
        let mut spec = match self.learner {
            LearnerArg::Basis => LearnerSpec::default(),
            LearnerArg::Kernel => LearnerSpec::kernel(),
        };
        if let Some(k) = self.knn {
            spec.locality = Locality::Knn { k };
        } else if let Some(scale) = self.bandwidth {
            spec.locality = Locality::Kernel { scale };
        }
        spec.validate()?;
        Ok(spec)
    }

    fn argv(&self) -> Vec<String> {
        let mut v = vec![
            "--folds".into(),
            self.folds.to_string(),
            "--seed".into(),
            self.seed.to_string(),
            "--ci-level".into(),
            self.ci_level.to_string(),
            "--learner".into(),
            match self.learner {
                LearnerArg::Basis => "basis".into(),
                LearnerArg::Kernel => "kernel".into(),
            },
        ];
        if let Some(b) = self.bandwidth {
            v.push("--bandwidth".into());
            v.push(b.to_string());
        }
        if let Some(k) = self.knn {
            v.push("--knn".into());
            v.push(k.to_string());
        }
        v
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[command(flatten)]
    fit: FitArgs,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CurveArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma list "0.5,1,2" or log spec "log:0.1:10:25"
    #[arg(long, default_value = "log:0.1:10:15")]
    delta_grid: String,
    /// Comma list of gammas
    #[arg(long, default_value = "1,2,3")]
    gamma_grid: String,
    #[command(flatten)]
    fit: FitArgs,
    /// Also write a static SVG chart
    #[arg(long, default_value_t = false)]
    svg: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RobustnessArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "log:0.2:5:9")]
    delta_grid: String,
    #[arg(long, default_value = "1,1.5,2,3,4,5")]
    gamma_grid: String,
    /// Bisection refinements between grid points
    #[arg(long, default_value_t = 6)]
    refine_steps: usize,
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum SimulateCmd {
    /// Population bound curves for the three analytic designs
    Figure1(Figure1Args),
    /// Plug-in versus doubly-robust bias across nuisance rates
    Bias(BiasArgs),
    /// Wald coverage of the bound intervals
    Coverage(CoverageArgs),
}

#[derive(Args)]
struct Figure1Args {
    #[arg(long, default_value = "1.5,2,3")]
    gamma_grid: String,
    #[arg(long, default_value = "log:0.1:10:25")]
    delta_grid: String,
    #[arg(long, default_value_t = false)]
    svg: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BiasArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value = "0.1,0.15,0.2,0.25,0.3")]
    alphas: String,
    #[arg(long, default_value_t = 2.0)]
    delta: f64,
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.95)]
    ci_level: f64,
    #[arg(long, default_value_t = false)]
    svg: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CoverageArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    #[arg(long, default_value_t = 2.0)]
    delta: f64,
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    /// Rate exponent for noised-truth nuisances; exact truth if omitted
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.95)]
    ci_level: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum T2Cmd {
    /// Sharp bounds by coordinate ascent over the density-ratio tables
    SharpBounds(T2SharpArgs),
    /// Exhaustive-grid oracle for the same bounds
    BruteForce(T2BruteArgs),
}

#[derive(Args)]
struct T2CommonArgs {
    /// Model file (JSON) with supports and probability tables
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    /// Stage-1 sensitivity cap
    #[arg(long, default_value_t = 1.0)]
    lambda1: f64,
    /// Stage-2 sensitivity cap
    #[arg(long, default_value_t = 1.0)]
    lambda2: f64,
    /// Treatment probability mixed into the rho factor
    #[arg(long, value_enum, default_value_t = RhoWeightArg::Stage2)]
    rho_weight: RhoWeightArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RhoWeightArg {
    Stage2,
    Stage1,
}

impl From<RhoWeightArg> for RhoWeight {
    fn from(v: RhoWeightArg) -> Self {
        match v {
            RhoWeightArg::Stage2 => RhoWeight::Stage2,
            RhoWeightArg::Stage1 => RhoWeight::Stage1,
        }
    }
}

#[derive(Args)]
struct T2SharpArgs {
    #[command(flatten)]
    common: T2CommonArgs,
    #[arg(long, default_value_t = 16)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct T2BruteArgs {
    #[command(flatten)]
    common: T2CommonArgs,
    #[arg(long, default_value_t = 0.01)]
    grid_step: f64,
}

#[derive(Args)]
struct RerunArgs {
    /// Manifest written by a previous run
    #[arg(long)]
    manifest: PathBuf,
    /// Directory for the reproduced outputs
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli.command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Curve(args) => cmd_curve(args),
        Command::RobustnessGamma(args) => cmd_robustness(args),
        Command::Simulate(SimulateCmd::Figure1(args)) => cmd_figure1(args),
        Command::Simulate(SimulateCmd::Bias(args)) => cmd_bias(args),
        Command::Simulate(SimulateCmd::Coverage(args)) => cmd_coverage(args),
        Command::T2(T2Cmd::SharpBounds(args)) => cmd_t2_sharp(args),
        Command::T2(T2Cmd::BruteForce(args)) => cmd_t2_brute(args),
        Command::Rerun(args) => cmd_rerun(args),
    }
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("bad {what} value '{t}'")))
        .collect()
}

/// "log:min:max:count" or a comma list.
fn parse_delta_grid(text: &str) -> Result<Vec<f64>> {
    if let Some(rest) = text.strip_prefix("log:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            bail!("log grid must look like log:MIN:MAX:COUNT, got '{text}'");
        }
        let min: f64 = parts[0].parse().context("bad log-grid min")?;
        let max: f64 = parts[1].parse().context("bad log-grid max")?;
        let count: usize = parts[2].parse().context("bad log-grid count")?;
        let grid = ParamGrid::log_deltas(min, max, count, vec![1.0])?;
        Ok(grid.deltas().to_vec())
    } else {
        parse_list(text, "delta")
    }
}

#[derive(Serialize)]
struct EstimateOutput<'a> {
    delta: f64,
    gamma: f64,
    folds: usize,
    seed: u64,
    estimate: &'a BoundEstimate,
    ingest: &'a IngestReport,
}

fn cmd_estimate(args: EstimateArgs) -> Result<()> {
    let schema = args.data.schema()?;
    let (data, report) = load_csv(&args.data.input, &schema)?;
    let spec = args.fit.spec()?;
    let est = estimate_bounds(
        &data,
        &spec,
        args.fit.folds,
        args.delta,
        args.gamma,
        args.fit.ci_level,
        args.fit.seed,
    )?;

    let mut argv = vec!["estimate".to_string()];
    argv.extend(args.data.argv());
    argv.extend(["--delta".into(), args.delta.to_string(), "--gamma".into(), args.gamma.to_string()]);
    argv.extend(args.fit.argv());
    argv.extend(["--out".into(), args.out.display().to_string()]);
    let mut mb = ManifestBuilder::new(argv, args.fit.seed, &args.out);
    mb.record_input(&args.data.input)?;
    let payload = EstimateOutput {
        delta: args.delta,
        gamma: args.gamma,
        folds: args.fit.folds,
        seed: args.fit.seed,
        estimate: &est,
        ingest: &report,
    };
    mb.write_output("estimate.json", serde_json::to_string_pretty(&payload)?.as_bytes())?;
    mb.seal("estimate")?;
    println!(
        "psi bounds [{}, {}], {}% CI [{}, {}], n = {} (dropped {})",
        fmt_f64(est.psi_lower),
        fmt_f64(est.psi_upper),
        est.ci_level * 100.0,
        fmt_f64(est.ci_lower_bound),
        fmt_f64(est.ci_upper_bound),
        est.n,
        report.dropped_rows
    );
    Ok(())
}

fn cmd_curve(args: CurveArgs) -> Result<()> {
    let schema = args.data.schema()?;
    let (data, _report) = load_csv(&args.data.input, &schema)?;
    let spec = args.fit.spec()?;
    let grid = ParamGrid::new(
        parse_delta_grid(&args.delta_grid)?,
        parse_list(&args.gamma_grid, "gamma")?,
    )?;
    let result = curve(&data, &spec, &grid, args.fit.folds, args.fit.ci_level, args.fit.seed)?;

    let mut argv = vec!["curve".to_string()];
    argv.extend(args.data.argv());
    argv.extend([
        "--delta-grid".into(),
        args.delta_grid.clone(),
        "--gamma-grid".into(),
        args.gamma_grid.clone(),
    ]);
    argv.extend(args.fit.argv());
    if args.svg {
        argv.push("--svg".into());
    }
    argv.extend(["--out".into(), args.out.display().to_string()]);
    let mut mb = ManifestBuilder::new(argv, args.fit.seed, &args.out);
    mb.record_input(&args.data.input)?;
    mb.write_output("curve.csv", &curve_csv(&result)?)?;
    if args.svg {
        let mut series = Vec::new();
        for (gi, &gamma) in grid.gammas().iter().enumerate() {
            for (side, pick) in [
                ("lower", true),
                ("upper", false),
            ] {
                let points: Vec<(f64, f64)> = grid
                    .deltas()
                    .iter()
                    .enumerate()
                    .map(|(di, &d)| {
                        let e = result.estimate(gi, di);
                        (d, if pick { e.psi_lower } else { e.psi_upper })
                    })
                    .collect();
                series.push(Series {
                    label: format!("gamma {gamma} {side}"),
                    points,
                    dashed: side == "upper",
                });
            }
        }
        let svg = line_chart_svg("effect bounds", "delta", "psi", &series);
        mb.write_output("curve.svg", svg.as_bytes())?;
    }
    mb.seal("curve")?;
    println!("curve written for {} deltas x {} gammas", grid.deltas().len(), grid.gammas().len());
    Ok(())
}

#[derive(Serialize)]
struct RobustnessOutput {
    gamma_grid: Vec<f64>,
    delta_grid: Vec<f64>,
    refine_steps: usize,
    report: RobustnessReport,
}

fn cmd_robustness(args: RobustnessArgs) -> Result<()> {
    let schema = args.data.schema()?;
    let (data, _report) = load_csv(&args.data.input, &schema)?;
    let spec = args.fit.spec()?;
    let deltas = parse_delta_grid(&args.delta_grid)?;
    let gammas = parse_list(&args.gamma_grid, "gamma")?;
    let report = robustness_gamma(&gammas, args.refine_steps, |gamma| {
        let grid = ParamGrid::new(deltas.clone(), vec![gamma])?;
        let c = curve(&data, &spec, &grid, args.fit.folds, args.fit.ci_level, args.fit.seed)?;
        Ok(c.gamma_row(0).to_vec())
    })?;

    let mut argv = vec!["robustness-gamma".to_string()];
    argv.extend(args.data.argv());
    argv.extend([
        "--delta-grid".into(),
        args.delta_grid.clone(),
        "--gamma-grid".into(),
        args.gamma_grid.clone(),
        "--refine-steps".into(),
        args.refine_steps.to_string(),
    ]);
    argv.extend(args.fit.argv());
    argv.extend(["--out".into(), args.out.display().to_string()]);
    let mut mb = ManifestBuilder::new(argv, args.fit.seed, &args.out);
    mb.record_input(&args.data.input)?;
    let payload = RobustnessOutput {
        gamma_grid: gammas,
        delta_grid: deltas,
        refine_steps: args.refine_steps,
        report,
    };
    mb.write_output("robustness.json", serde_json::to_string_pretty(&payload)?.as_bytes())?;
    mb.seal("robustness")?;
    println!("{}", serde_json::to_string(&payload.report)?);
    Ok(())
}

fn cmd_figure1(args: Figure1Args) -> Result<()> {
    let gammas = parse_list(&args.gamma_grid, "gamma")?;
    let deltas = parse_delta_grid(&args.delta_grid)?;
    let rows = figure1_sweep(&gammas, &deltas)?;

    let mut argv = vec!["simulate".to_string(), "figure1".to_string()];
    argv.extend([
        "--gamma-grid".into(),
        args.gamma_grid.clone(),
        "--delta-grid".into(),
        args.delta_grid.clone(),
    ]);
    if args.svg {
        argv.push("--svg".into());
    }
    argv.extend(["--out".into(), args.out.display().to_string()]);
    let mut mb = ManifestBuilder::new(argv, 0, &args.out);
    for panel in ["a", "b", "c"] {
        let panel_rows: Vec<_> = rows.iter().filter(|r| r.panel == panel).cloned().collect();
        mb.write_output(&format!("figure1_panel_{panel}.csv"), &figure1_csv(&panel_rows)?)?;
        if args.svg {
            let gamma = *gammas.last().expect("nonempty gamma grid");
            let mut series = Vec::new();
            for noise in ["gaussian", "uniform"] {
                for side in ["lower", "upper"] {
                    let points: Vec<(f64, f64)> = panel_rows
                        .iter()
                        .filter(|r| r.noise == noise && r.gamma == gamma)
                        .map(|r| (r.delta, if side == "lower" { r.psi_lower } else { r.psi_upper }))
                        .collect();
                    series.push(Series {
                        label: format!("{noise} {side}"),
                        points,
                        dashed: noise == "uniform",
                    });
                }
            }
            let svg = line_chart_svg(
                &format!("panel {panel}, gamma {gamma}"),
                "delta",
                "psi bounds",
                &series,
            );
            mb.write_output(&format!("figure1_panel_{panel}.svg"), svg.as_bytes())?;
        }
    }
    mb.seal("figure1")?;
    println!("figure1 tables written to {}", args.out.display());
    Ok(())
}

fn cmd_bias(args: BiasArgs) -> Result<()> {
    let config = SimConfig {
        dgp: AnalyticDgp::standard(),
        n: args.n,
        reps: args.reps,
        delta: args.delta,
        gamma: args.gamma,
        seed: args.seed,
        ci_level: args.ci_level,
    };
    let alphas = parse_list(&args.alphas, "alpha")?;
    let rows = bias_sweep(&config, &alphas)?;

    let mut argv = vec!["simulate".to_string(), "bias".to_string()];
    argv.extend([
        "--n".into(),
        args.n.to_string(),
        "--reps".into(),
        args.reps.to_string(),
        "--alphas".into(),
        args.alphas.clone(),
        "--delta".into(),
        args.delta.to_string(),
        "--gamma".into(),
        args.gamma.to_string(),
        "--seed".into(),
        args.seed.to_string(),
        "--ci-level".into(),
        args.ci_level.to_string(),
    ]);
    if args.svg {
        argv.push("--svg".into());
    }
    argv.extend(["--out".into(), args.out.display().to_string()]);
    let mut mb = ManifestBuilder::new(argv, args.seed, &args.out);
    mb.write_output("bias.csv", &bias_csv(&rows)?)?;
    if args.svg {
        let mut series = Vec::new();
        for estimator in ["plugin", "dr"] {
            for side in ["lower", "upper"] {
                let points: Vec<(f64, f64)> = rows
                    .iter()
                    .filter(|r| r.estimator == estimator && r.side == side && r.abs_bias > 0.0)
                    .map(|r| (r.alpha, r.abs_bias.ln()))
                    .collect();
                series.push(Series {
                    label: format!("{estimator} {side}"),
                    points,
                    dashed: side == "upper",
                });
            }
        }
        let svg = line_chart_svg("log absolute bias", "alpha", "ln |bias|", &series);
        mb.write_output("bias.svg", svg.as_bytes())?;
    }
    mb.seal("bias")?;
    println!("bias table written to {}", args.out.display());
    Ok(())
}

fn cmd_coverage(args: CoverageArgs) -> Result<()> {
    let config = SimConfig {
        dgp: AnalyticDgp::standard(),
        n: args.n,
        reps: args.reps,
        delta: args.delta,
        gamma: args.gamma,
        seed: args.seed,
        ci_level: args.ci_level,
    };
    let nuisances = match args.alpha {
        Some(alpha) => CoverageNuisances::Noised { alpha },
        None => CoverageNuisances::ExactTruth,
    };
    let rows = coverage_study(&config, nuisances)?;

    let mut argv = vec!["simulate".to_string(), "coverage".to_string()];
    argv.extend([
        "--n".into(),
        args.n.to_string(),
        "--reps".into(),
        args.reps.to_string(),
        "--delta".into(),
        args.delta.to_string(),
        "--gamma".into(),
        args.gamma.to_string(),
    ]);
    if let Some(alpha) = args.alpha {
        argv.extend(["--alpha".into(), alpha.to_string()]);
    }
    argv.extend([
        "--seed".into(),
        args.seed.to_string(),
        "--ci-level".into(),
        args.ci_level.to_string(),
        "--out".into(),
        args.out.display().to_string(),
    ]);
    let mut mb = ManifestBuilder::new(argv, args.seed, &args.out);
    mb.write_output("coverage.csv", &coverage_csv(&rows)?)?;
    mb.seal("coverage")?;
    for row in &rows {
        println!("{} coverage {:.4} (mean width {:.4})", row.side, row.coverage, row.mean_ci_width);
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<DiscreteT2Model> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read model {}", path.display()))?;
    let model: DiscreteT2Model =
        serde_json::from_str(&text).context("model file is not valid JSON")?;
    model.validate()?;
    Ok(model)
}

#[derive(Serialize)]
struct T2SharpOutput {
    delta: f64,
    lambda1_cap: f64,
    lambda2_cap: f64,
    gformula: f64,
    lower: f64,
    upper: f64,
    max_compat_residual_lower: f64,
    max_compat_residual_upper: f64,
    tables_lower: LambdaTables,
    tables_upper: LambdaTables,
}

fn t2_argv(kind: &str, c: &T2CommonArgs) -> Vec<String> {
    vec![
        "t2".into(),
        kind.into(),
        "--model".into(),
        c.model.display().to_string(),
        "--delta".into(),
        c.delta.to_string(),
        "--lambda1".into(),
        c.lambda1.to_string(),
        "--lambda2".into(),
        c.lambda2.to_string(),
        "--rho-weight".into(),
        match c.rho_weight {
            RhoWeightArg::Stage2 => "stage2".into(),
            RhoWeightArg::Stage1 => "stage1".into(),
        },
    ]
}

fn cmd_t2_sharp(args: T2SharpArgs) -> Result<()> {
    let c = &args.common;
    let model = load_model(&c.model)?;
    let opts = T2Options {
        rho_weight: c.rho_weight.into(),
        restarts: args.restarts,
        max_iters: 40,
        seed: args.seed,
    };
    let (lower, upper) = sharp_bounds_both(&model, c.delta, c.lambda1, c.lambda2, &opts)?;
    let compat_lower = check_compatibility(&lower.tables, &model, opts.rho_weight)?;
    let compat_upper = check_compatibility(&upper.tables, &model, opts.rho_weight)?;
    if !compat_upper.feasible(1e-6) {
        bail!("solver returned infeasible upper tables: residual {}", compat_upper.max_residual);
    }
    let payload = T2SharpOutput {
        delta: c.delta,
        lambda1_cap: c.lambda1,
        lambda2_cap: c.lambda2,
        gformula: gformula_point(&model, c.delta)?,
        lower: lower.value,
        upper: upper.value,
        max_compat_residual_lower: compat_lower.max_residual,
        max_compat_residual_upper: compat_upper.max_residual,
        tables_lower: lower.tables,
        tables_upper: upper.tables,
    };

    let mut argv = t2_argv("sharp-bounds", c);
    argv.extend([
        "--restarts".into(),
        args.restarts.to_string(),
        "--seed".into(),
        args.seed.to_string(),
        "--out".into(),
        c.out.display().to_string(),
    ]);
    let mut mb = ManifestBuilder::new(argv, args.seed, &c.out);
    mb.record_input(&c.model)?;
    mb.write_output("t2_bounds.json", serde_json::to_string_pretty(&payload)?.as_bytes())?;
    mb.seal("t2_bounds")?;
    println!("sharp bounds [{}, {}]", fmt_f64(payload.lower), fmt_f64(payload.upper));
    Ok(())
}

#[derive(Serialize)]
struct T2BruteOutput {
    delta: f64,
    lambda1_cap: f64,
    lambda2_cap: f64,
    grid_step: f64,
    lower: f64,
    upper: f64,
}

fn cmd_t2_brute(args: T2BruteArgs) -> Result<()> {
    let c = &args.common;
    let model = load_model(&c.model)?;
    let (lower, upper) = brute_force_bounds(
        &model,
        c.delta,
        c.lambda1,
        c.lambda2,
        args.grid_step,
        c.rho_weight.into(),
    )?;
    let payload = T2BruteOutput {
        delta: c.delta,
        lambda1_cap: c.lambda1,
        lambda2_cap: c.lambda2,
        grid_step: args.grid_step,
        lower,
        upper,
    };
    let mut argv = t2_argv("brute-force", c);
    argv.extend([
        "--grid-step".into(),
        args.grid_step.to_string(),
        "--out".into(),
        c.out.display().to_string(),
    ]);
    let mut mb = ManifestBuilder::new(argv, 0, &c.out);
    mb.record_input(&c.model)?;
    mb.write_output("t2_brute.json", serde_json::to_string_pretty(&payload)?.as_bytes())?;
    mb.seal("t2_brute")?;
    println!("brute-force bounds [{}, {}]", fmt_f64(lower), fmt_f64(upper));
    Ok(())
}

fn cmd_rerun(args: RerunArgs) -> Result<()> {
    let manifest = read_manifest(&args.manifest)?;
    // verify inputs still match before replaying
    for input in &manifest.inputs {
        let hash = sha256_file(Path::new(&input.path))?;
        if hash != input.sha256 {
            bail!("input {} changed since the original run", input.path);
        }
    }
    // swap the recorded --out for the requested one and re-dispatch
    let mut argv = manifest.command.clone();
    match argv.iter().position(|a| a == "--out") {
        Some(i) if i + 1 < argv.len() => argv[i + 1] = args.out.display().to_string(),
        _ => {
            argv.push("--out".into());
            argv.push(args.out.display().to_string());
        }
    }
    let mut full = vec!["incbounds".to_string()];
    full.extend(argv);
    let cli = Cli::try_parse_from(&full).context("manifest command failed to parse")?;
    dispatch(cli.command)?;
    // byte-for-byte verification against the recorded output hashes
    let mut mismatches = Vec::new();
    for output in &manifest.outputs {
        let reproduced = args.out.join(&output.path);
        let hash = sha256_file(&reproduced)?;
        if hash != output.sha256 {
            mismatches.push(output.path.clone());
        }
    }
    if !mismatches.is_empty() {
        bail!("reproduced outputs differ: {}", mismatches.join(", "));
    }
    println!("reproduced {} outputs byte-identically", manifest.outputs.len());
    Ok(())
}
