//! Subcommand implementations. Each writes its artifacts into a run
//! directory (`runs/<label>/<timestamp>/` by default) and prints a summary
//! or the artifact itself to stdout.

use anyhow::{Context, Result};
use clap::Args;
use ndarray::Array2;
use std::path::{Path, PathBuf};
use std::time::Instant;

use menuforge::milp::export_lp_text;
use menuforge::nn::NnError;
use menuforge::{
    adaptive_grid, build_point_milp, compute_safety_margins, empirical_margins, expected_revenue,
    item_myerson_revenue, load_checkpoint, load_mechanism, myerson_reserve, save_checkpoint,
    save_mechanism, slice_mechanism, train, transform_all, vcg_revenue_mc, verify_mechanism,
    yao_optimal_revenue, Distribution, EvalRecord, LipschitzCert, Mechanism64, MenuNetwork,
    SafetyMargins, TransformConfig, TransformStats, ValuationProfile, ValueGrid64, VerifyConfig,
};

use crate::config::{parse_dist, ExperimentConfig};
use crate::output::{csv_with_comments, resolve_out_dir, stamp_json, write_file};
use crate::{CheckFailed, UsageError};

fn read_to_string(path: &str) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read {path}: {e}")).into())
}

fn load_net(path: &str) -> Result<(MenuNetwork<f64>, LipschitzCert)> {
    let text = read_to_string(path)?;
    load_checkpoint::<f64>(&text)
        .map_err(|e: NnError| UsageError(format!("bad checkpoint {path}: {e}")).into())
}

fn load_mech(path: &str) -> Result<Mechanism64> {
    let text = read_to_string(path)?;
    load_mechanism::<f64>(&text)
        .map_err(|e| UsageError(format!("bad mechanism file {path}: {e}")).into())
}

/// Loads the config if given, else label-pattern defaults for the network's
/// shape; always cross-checks dimensions against the artifact.
fn config_for_net(
    config: Option<&str>,
    net: &MenuNetwork<f64>,
) -> Result<ExperimentConfig> {
    let cfg = match config {
        Some(path) => ExperimentConfig::load(Path::new(path))?,
        None => {
            let kind = match net.kind {
                menuforge::ValuationKind::Additive => "additive",
                menuforge::ValuationKind::UnitDemand => "unit",
            };
            ExperimentConfig::for_label(&format!("{}x{}-uniform-{kind}", net.n, net.m))
        }
    };
    if cfg.n != net.n || cfg.m != net.m {
        return Err(UsageError(format!(
            "config is {}x{} but the artifact is {}x{}",
            cfg.n, cfg.m, net.n, net.m
        ))
        .into());
    }
    Ok(cfg)
}

fn margins_for(grid: &ValueGrid64, cert: &LipschitzCert, n: usize, m: usize) -> SafetyMargins {
    compute_safety_margins(
        grid.epsilon(),
        cert.l_a,
        cert.l_p,
        m,
        grid.v_max,
        n,
    )
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Experiment config (TOML, or JSON fallback).
    #[arg(long)]
    pub config: String,
    /// Override the config's root seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default runs/<label>/<timestamp>).
    #[arg(long)]
    pub out: Option<String>,
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(Path::new(&args.config))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.train.seed = cfg.seed;
    let dist = cfg.dist()?;
    let kind = cfg.valuation_kind()?;
    let out = resolve_out_dir(args.out.as_deref(), &cfg.output_dir, &cfg.label)?;

    let started = Instant::now();
    let result = train::<f64>(&cfg.train, dist, cfg.n, cfg.m, kind)?;
    let best = &result.best;

    let checkpoint = save_checkpoint(&best.net, &best.cert);
    write_file(&out, "checkpoint.json", &stamp_json(&checkpoint, cfg.seed, &cfg.label)?)?;

    let mut body = String::from(EvalRecord::csv_header());
    body.push('\n');
    for record in &result.evals {
        body.push_str(&record.csv_row());
        body.push('\n');
    }
    let comments = [
        ("seed", cfg.seed.to_string()),
        ("label", cfg.label.clone()),
    ];
    write_file(&out, "log.csv", &csv_with_comments(&comments, &body))?;
    write_file(&out, "config.toml", &toml::to_string_pretty(&cfg)?)?;

    println!(
        "trained {}: iter={} revenue={:.5} violation={:.5} meets_threshold={} L_a={:.3e} L_p={:.3e} elapsed={:.1}s",
        cfg.label,
        best.iteration,
        best.revenue,
        best.violation,
        best.meets_threshold,
        best.cert.l_a,
        best.cert.l_p,
        started.elapsed().as_secs_f64(),
    );
    println!("artifacts in {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// transform
// ---------------------------------------------------------------------------

/// Strategy switches shared by `transform` and `milp-export`.
#[derive(Debug, Args)]
pub struct StrategyArgs {
    /// Disable skipping of already-compatible grid points.
    #[arg(long)]
    pub no_skip: bool,
    /// Keep-choice pin percentage (0 disables pinning).
    #[arg(long)]
    pub keep_choice: Option<f64>,
    /// Disable opt-out screening of never-chosen elements.
    #[arg(long)]
    pub no_ir_screen: bool,
    /// Allow signed price adjustments (disables screening).
    #[arg(long)]
    pub signed: bool,
    /// Override the big-M constant.
    #[arg(long)]
    pub big_m: Option<f64>,
    /// Clip the aggregate allocation of others at 1 - n*s_f instead of
    /// 1 - s_f.
    #[arg(long)]
    pub clip_per_bidder: bool,
}

impl StrategyArgs {
    fn apply(&self, mut tc: TransformConfig) -> TransformConfig {
        if self.no_skip {
            tc.zero_violation_skip = false;
        }
        if let Some(pct) = self.keep_choice {
            tc.keep_choice_percent = pct;
        }
        if self.no_ir_screen {
            tc.ir_screening = false;
        }
        if self.signed {
            tc.signed_adjustments = true;
            tc.ir_screening = false;
        }
        if self.big_m.is_some() {
            tc.big_m = self.big_m;
        }
        if self.clip_per_bidder {
            tc.scale_clip_by_bidders = true;
        }
        tc
    }
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    /// Trained checkpoint to transform.
    #[arg(long)]
    pub checkpoint: String,
    /// Experiment config for grid/distribution context.
    #[arg(long)]
    pub config: Option<String>,
    /// Uniform grid resolution override.
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Prune the grid with the certified-margin spacing bound first.
    #[arg(long)]
    pub adaptive: bool,
    #[command(flatten)]
    pub strategy: StrategyArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<String>,
}

pub fn cmd_transform(args: &TransformArgs) -> Result<()> {
    let (net, cert) = load_net(&args.checkpoint)?;
    let mut cfg = config_for_net(args.config.as_deref(), &net)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(points) = args.grid_points {
        cfg.grid.points_per_axis = points;
    }
    let mut grid = cfg.build_grid()?;
    if args.adaptive || cfg.grid.adaptive {
        let coarse = empirical_margins(&net, &grid);
        grid = adaptive_grid(&grid, &coarse, cert.l_a, cert.l_p);
    }
    let margins = margins_for(&grid, &cert, net.n, net.m);
    let tc = args.strategy.apply(cfg.transform.clone());
    let out = resolve_out_dir(args.out.as_deref(), &cfg.output_dir, &cfg.label)?;

    let table = transform_all(&net, &grid, &margins, &tc)?;
    let stats = table.stats.clone();
    write_file(
        &out,
        "stats.csv",
        &stats_csv(&stats, cfg.seed, &cfg.label, &tc),
    )?;

    let mut mech = menuforge::Mechanism::new(net, table, grid)?;
    // Wall-clock fields are the one nondeterministic part of the artifact;
    // zero them here so reruns are byte-identical (timings live in
    // stats.csv).
    mech.adjustments.stats.total_runtime_ms = 0.0;
    for entry in &mut mech.adjustments.stats.per_milp {
        entry.solve_ms = 0.0;
    }
    write_file(
        &out,
        "mechanism.json",
        &stamp_json(&save_mechanism(&mech), cfg.seed, &cfg.label)?,
    )?;

    println!(
        "transformed {}: {} grid points, {} MILPs solved, {} skipped, {} adjustments, s_f={:.3e} s_m={:.5}, {:.1}s",
        cfg.label,
        stats.grid_points_total,
        stats.milps_solved,
        stats.points_skipped,
        mech.adjustments.bidders.iter().map(Vec::len).sum::<usize>(),
        margins.s_f,
        margins.s_m,
        stats.total_runtime_ms / 1e3,
    );
    println!("artifacts in {}", out.display());
    Ok(())
}

fn stats_csv(stats: &TransformStats, seed: u64, label: &str, tc: &TransformConfig) -> String {
    let screened_total: usize = stats.per_milp.iter().map(|s| s.screened.len()).sum();
    let comments = [
        ("seed", seed.to_string()),
        ("label", label.to_string()),
        ("bidders_processed", stats.bidders_processed.to_string()),
        ("grid_points_total", stats.grid_points_total.to_string()),
        ("milps_solved", stats.milps_solved.to_string()),
        ("points_skipped", stats.points_skipped.to_string()),
        ("screened_elements", screened_total.to_string()),
        ("total_constraints", stats.total_constraints.to_string()),
        ("total_binaries", stats.total_binaries.to_string()),
        (
            "total_runtime_s",
            format!("{:.3}", stats.total_runtime_ms / 1e3),
        ),
        ("zero_violation_skip", tc.zero_violation_skip.to_string()),
        ("keep_choice_percent", tc.keep_choice_percent.to_string()),
        ("ir_screening", tc.ir_screening.to_string()),
        ("signed_adjustments", tc.signed_adjustments.to_string()),
    ];
    let mut body = String::from(
        "bidder,others_index,# Constraints,# Binary Variables,Run Time,kc_percent,kc_retries,screened,objective,nodes\n",
    );
    for s in &stats.per_milp {
        let screened: Vec<String> = s.screened.iter().map(|k| k.to_string()).collect();
        body.push_str(&format!(
            "{},{},{},{},{:.6},{},{},{},{:.9},{}\n",
            s.bidder,
            s.others_index,
            s.constraints,
            s.binaries,
            s.solve_ms / 1e3,
            s.kc_percent,
            s.kc_retries,
            screened.join(";"),
            s.objective,
            s.nodes,
        ));
    }
    csv_with_comments(&comments, &body)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Transformed mechanism file.
    #[arg(long, conflicts_with = "checkpoint")]
    pub mechanism: Option<String>,
    /// Raw checkpoint: evaluates the untransformed network.
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long)]
    pub config: Option<String>,
    /// Distribution override, e.g. `two-point:3,4,0.3`.
    #[arg(long)]
    pub dist: Option<String>,
    #[arg(long, default_value_t = 100_000)]
    pub samples: u64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    #[arg(long)]
    pub out: Option<String>,
}

/// Builds the mechanism under evaluation plus context shared with `verify`.
fn mechanism_from_args(
    mechanism: Option<&str>,
    checkpoint: Option<&str>,
    config: Option<&str>,
    grid_points: Option<usize>,
) -> Result<(Mechanism64, ExperimentConfig, &'static str)> {
    match (mechanism, checkpoint) {
        (Some(path), None) => {
            let mech = load_mech(path)?;
            let cfg = config_for_net(config, &mech.network)?;
            Ok((mech, cfg, "revenue_post"))
        }
        (None, Some(path)) => {
            let (net, cert) = load_net(path)?;
            let mut cfg = config_for_net(config, &net)?;
            if let Some(points) = grid_points {
                cfg.grid.points_per_axis = points;
            }
            let grid = cfg.build_grid()?;
            let margins = margins_for(&grid, &cert, net.n, net.m);
            let mech = Mechanism64::untransformed(net, grid, margins)?;
            Ok((mech, cfg, "revenue_pre"))
        }
        _ => Err(UsageError("give exactly one of --mechanism or --checkpoint".into()).into()),
    }
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (mech, mut cfg, metric) = mechanism_from_args(
        args.mechanism.as_deref(),
        args.checkpoint.as_deref(),
        args.config.as_deref(),
        args.grid_points,
    )?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let dist_spec = args.dist.clone().unwrap_or_else(|| cfg.distribution.clone());
    let dist = parse_dist(&dist_spec)?;
    let (mean, stderr) = expected_revenue(&mech, dist, args.samples, cfg.seed)?;
    let doc = serde_json::json!({
        "metric": metric,
        "distribution": dist_spec,
        "samples": args.samples,
        "revenue_mean": mean,
        "stderr": stderr,
    });
    let text = stamp_json(&doc.to_string(), cfg.seed, &cfg.label)?;
    print!("{text}");
    if let Some(out) = &args.out {
        let dir = resolve_out_dir(Some(out), &cfg.output_dir, &cfg.label)?;
        write_file(&dir, "eval.json", &text)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, conflicts_with = "checkpoint")]
    pub mechanism: Option<String>,
    /// Raw checkpoint: verifies the untransformed network (expected to
    /// fail compatibility at roughly the training-time violation rate).
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long)]
    pub config: Option<String>,
    #[arg(long)]
    pub dist: Option<String>,
    /// Samples for the compatibility and IR scans.
    #[arg(long)]
    pub samples: Option<u64>,
    /// Truthful profiles for the misreport search.
    #[arg(long)]
    pub profiles: Option<u64>,
    /// Misreport evaluations per (profile, bidder).
    #[arg(long)]
    pub budget: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    #[arg(long)]
    pub out: Option<String>,
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<()> {
    let (mech, mut cfg, _) = mechanism_from_args(
        args.mechanism.as_deref(),
        args.checkpoint.as_deref(),
        args.config.as_deref(),
        args.grid_points,
    )?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let dist_spec = args.dist.clone().unwrap_or_else(|| cfg.distribution.clone());
    let dist = parse_dist(&dist_spec)?;
    if dist.v_max() > mech.grid.v_max + 1e-12 {
        return Err(UsageError(format!(
            "distribution support reaches {} but the mechanism's domain ends at {}",
            dist.v_max(),
            mech.grid.v_max
        ))
        .into());
    }
    let mut vc: VerifyConfig = cfg.verify.clone();
    vc.seed = cfg.seed;
    if let Some(s) = args.samples {
        vc.compat_samples = s;
        vc.ir_samples = s;
    }
    if let Some(p) = args.profiles {
        vc.regret_profiles = p;
    }
    if let Some(b) = args.budget {
        vc.misreport_budget = b;
    }
    let report = verify_mechanism(&mech, dist, &vc);
    let text = stamp_json(&report.to_json(), cfg.seed, &cfg.label)?;
    print!("{text}");
    if let Some(out) = &args.out {
        let dir = resolve_out_dir(Some(out), &cfg.output_dir, &cfg.label)?;
        write_file(&dir, "verify.json", &text)?;
    }
    if !report.pass() {
        return Err(CheckFailed("verification failed".into()).into());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// baseline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BaselineKind {
    /// Efficient allocation with pivot payments (additive values).
    Vcg,
    /// Independent optimal single-item auctions per item.
    ItemMyerson,
    /// Optimal single-item auction with ironing.
    MyersonIroned,
    /// Exact optimal revenue for two items, binary i.i.d. values.
    YaoOptimal,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long, value_enum)]
    pub which: BaselineKind,
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    #[arg(long, default_value = "uniform-unit")]
    pub dist: String,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<String>,
}

pub fn cmd_baseline(args: &BaselineArgs) -> Result<()> {
    let dist = parse_dist(&args.dist)?;
    let (metric, mean, stderr, extra) = match args.which {
        BaselineKind::Vcg => {
            let (mean, se) = vcg_revenue_mc(dist, args.n, args.m, args.samples, args.seed)?;
            ("vcg", mean, se, None)
        }
        BaselineKind::ItemMyerson => {
            let (mean, se) = item_myerson_revenue(dist, args.n, args.m, args.samples, args.seed)?;
            ("item_myerson", mean, se, None)
        }
        BaselineKind::MyersonIroned => {
            let (mean, se) = item_myerson_revenue(dist, args.n, 1, args.samples, args.seed)?;
            let reserve = myerson_reserve(dist)?;
            ("myerson_ironed", mean, se, Some(("reserve", reserve)))
        }
        BaselineKind::YaoOptimal => {
            let Distribution::TwoPoint { a, b, p } = dist else {
                return Err(UsageError(
                    "--which yao-optimal needs --dist two-point:a,b,p".into(),
                )
                .into());
            };
            let exact = yao_optimal_revenue(args.n, a, b, p)?;
            ("yao_optimal", exact, 0.0, None)
        }
    };
    let mut doc = serde_json::json!({
        "metric": metric,
        "n": args.n,
        "m": args.m,
        "distribution": args.dist,
        "samples": if args.which == BaselineKind::YaoOptimal { 0 } else { args.samples },
        "mean": mean,
        "stderr": stderr,
    });
    if let Some((key, value)) = extra {
        doc[key] = serde_json::json!(value);
    }
    let text = stamp_json(&doc.to_string(), args.seed, metric)?;
    print!("{text}");
    if let Some(out) = &args.out {
        let dir = resolve_out_dir(Some(out), "runs", metric)?;
        write_file(&dir, "baseline.json", &text)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// slice
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct SliceArgs {
    #[arg(long)]
    pub mechanism: String,
    /// Bidder whose allocation and payment are reported.
    #[arg(long, default_value_t = 0)]
    pub target: usize,
    /// Swept value axes as bidder:item (repeatable).
    #[arg(long = "axis", default_values_t = [String::from("0:0")])]
    pub axes: Vec<String>,
    #[arg(long, default_value_t = 101)]
    pub resolution: usize,
    /// Base profile `v11,v12;v21,v22` (bidders split by `;`). Default all
    /// zeros.
    #[arg(long)]
    pub base: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<String>,
}

pub fn cmd_slice(args: &SliceArgs) -> Result<()> {
    let mech = load_mech(&args.mechanism)?;
    let (n, m) = (mech.n(), mech.m());
    let mut axes = Vec::new();
    for spec in &args.axes {
        let Some((b, j)) = spec.split_once(':') else {
            return Err(UsageError(format!("bad --axis {spec:?}, want bidder:item")).into());
        };
        let parse = |t: &str| -> Result<usize> {
            t.trim()
                .parse()
                .map_err(|e| UsageError(format!("bad --axis {spec:?}: {e}")).into())
        };
        axes.push((parse(b)?, parse(j)?));
    }
    let values = match &args.base {
        None => Array2::zeros((n, m)),
        Some(text) => {
            let rows: Vec<&str> = text.split(';').collect();
            if rows.len() != n {
                return Err(
                    UsageError(format!("base has {} bidders, want {n}", rows.len())).into(),
                );
            }
            let mut values = Array2::zeros((n, m));
            for (i, row) in rows.iter().enumerate() {
                let cells: Vec<&str> = row.split(',').collect();
                if cells.len() != m {
                    return Err(UsageError(format!(
                        "base bidder {i} has {} items, want {m}",
                        cells.len()
                    ))
                    .into());
                }
                for (j, cell) in cells.iter().enumerate() {
                    values[[i, j]] = cell.trim().parse().map_err(|e| {
                        UsageError(format!("bad base value {cell:?}: {e}"))
                    })?;
                }
            }
            values
        }
    };
    let base = ValuationProfile::new(values, mech.network.kind, mech.grid.v_max)
        .map_err(|e| UsageError(format!("bad base profile: {e}")))?;
    let table = slice_mechanism(&mech, &base, args.target, &axes, args.resolution)?;
    let comments = [("seed", args.seed.to_string()), ("target", args.target.to_string())];
    let text = csv_with_comments(&comments, &table.to_csv());
    print!("{text}");
    if let Some(out) = &args.out {
        let dir = resolve_out_dir(Some(out), "runs", "slice")?;
        write_file(&dir, "slice.csv", &text)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// milp-export
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct MilpExportArgs {
    #[arg(long)]
    pub checkpoint: String,
    #[arg(long)]
    pub config: Option<String>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub bidder: usize,
    #[arg(long, default_value_t = 0)]
    pub others_index: usize,
    #[command(flatten)]
    pub strategy: StrategyArgs,
    /// Also solve the program and print the objective.
    #[arg(long)]
    pub solve: bool,
    /// LP file path (default <out>/point.lp).
    #[arg(long)]
    pub lp_out: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
}

pub fn cmd_milp_export(args: &MilpExportArgs) -> Result<()> {
    let (net, cert) = load_net(&args.checkpoint)?;
    let mut cfg = config_for_net(args.config.as_deref(), &net)?;
    if let Some(points) = args.grid_points {
        cfg.grid.points_per_axis = points;
    }
    let grid = cfg.build_grid()?;
    let margins = margins_for(&grid, &cert, net.n, net.m);
    let tc = args.strategy.apply(cfg.transform.clone());
    let build = build_point_milp(&net, &grid, &margins, &tc, args.bidder, args.others_index)?;
    let lp = export_lp_text(&build.instance);

    let path = match &args.lp_out {
        Some(path) => {
            let path = PathBuf::from(path);
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&path, &lp).with_context(|| format!("cannot write {}", path.display()))?;
            path
        }
        None => {
            let dir = resolve_out_dir(args.out.as_deref(), &cfg.output_dir, &cfg.label)?;
            write_file(&dir, "point.lp", &lp)?
        }
    };
    let binaries = build
        .instance
        .variables
        .iter()
        .filter(|v| v.is_binary)
        .count();
    println!(
        "bidder {} point {}: {} variables ({} binary), {} constraints, {} screened, kc {}%",
        args.bidder,
        args.others_index,
        build.instance.variables.len(),
        binaries,
        build.instance.constraints.len(),
        build.screened.len(),
        build.kc_percent,
    );
    println!("LP written to {}", path.display());
    if args.solve {
        let sol = menuforge::milp::solve_milp(&build.instance)
            .map_err(|e| anyhow::anyhow!("solve failed: {e}"))?;
        println!(
            "status={:?} objective={:.9} nodes={}",
            sol.status, sol.objective, sol.nodes
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories containing eval.json / baseline.json / verify.json.
    pub inputs: Vec<String>,
    /// External quoted figures, `metric[@label]=value` (marked as external
    /// quotes in the table).
    #[arg(long = "quote")]
    pub quotes: Vec<String>,
    #[arg(long)]
    pub out: Option<String>,
}

struct ReportRow {
    label: String,
    metric: String,
    value: String,
    stderr: String,
    source: String,
}

fn row_from_json(value: &serde_json::Value, file: &str) -> Option<ReportRow> {
    let label = value["label"].as_str().unwrap_or("?").to_string();
    if file == "verify.json" {
        let pass = value["compatibility"]["pass"].as_bool()?
            && value["regret"]["pass"].as_bool()?
            && value["ir"]["pass"].as_bool()?;
        return Some(ReportRow {
            label,
            metric: "verify_pass".into(),
            value: if pass { "1" } else { "0" }.into(),
            stderr: String::new(),
            source: "this artifact".into(),
        });
    }
    let metric = value["metric"].as_str()?.to_string();
    let mean = value
        .get("revenue_mean")
        .or_else(|| value.get("mean"))?
        .as_f64()?;
    let stderr = value["stderr"].as_f64().unwrap_or(0.0);
    let source = if stderr == 0.0 && value["samples"].as_u64() == Some(0) {
        "this artifact (exact)"
    } else {
        "this artifact"
    };
    Some(ReportRow {
        label,
        metric,
        value: format!("{mean:.6}"),
        stderr: if stderr > 0.0 {
            format!("{stderr:.6}")
        } else {
            String::new()
        },
        source: source.into(),
    })
}

pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for dir in &args.inputs {
        let dir = PathBuf::from(dir);
        if !dir.is_dir() {
            return Err(UsageError(format!("{} is not a directory", dir.display())).into());
        }
        for file in ["eval.json", "baseline.json", "verify.json"] {
            let path = dir.join(file);
            let Ok(text) = std::fs::read_to_string(&path) else {
                continue;
            };
            let value: serde_json::Value = serde_json::from_str(&text)
                .with_context(|| format!("bad JSON in {}", path.display()))?;
            if let Some(row) = row_from_json(&value, file) {
                rows.push(row);
            }
        }
    }
    for quote in &args.quotes {
        let Some((name, value)) = quote.split_once('=') else {
            return Err(
                UsageError(format!("bad --quote {quote:?}, want metric[@label]=value")).into(),
            );
        };
        let (metric, label) = match name.split_once('@') {
            Some((metric, label)) => (metric, label),
            None => (name, ""),
        };
        rows.push(ReportRow {
            label: label.into(),
            metric: metric.into(),
            value: value.into(),
            stderr: String::new(),
            source: "external quote".into(),
        });
    }

    let mut csv = String::from("label,metric,value,stderr,source\n");
    let mut md = String::from("| label | metric | value | stderr | source |\n| --- | --- | --- | --- | --- |\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.label, row.metric, row.value, row.stderr, row.source
        ));
        md.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            row.label, row.metric, row.value, row.stderr, row.source
        ));
    }
    print!("{csv}");
    if let Some(out) = &args.out {
        let dir = resolve_out_dir(Some(out), "runs", "report")?;
        write_file(&dir, "report.csv", &csv)?;
        write_file(&dir, "report.md", &md)?;
    }
    Ok(())
}
