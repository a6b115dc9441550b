//! Subcommand implementations: resolve settings, run, write outputs and manifest.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::info;
use serde::de::DeserializeOwned;
use serde::Serialize;

use sparsespan_core::backtest::{run_backtest, BacktestConfig, Strategy};
use sparsespan_core::inference::{nondominance_test, subsample_ci, DominanceConfig, SubsampleConfig, SupremumSet};
use sparsespan_core::lp::{SimplexPortfolio, UtilityLpInstance};
use sparsespan_core::metrics::{write_table_csv, PerformanceReport, ReportInputs};
use sparsespan_core::panel::{load_panel, parse_date, window_and_filter, ReturnPanel};
use sparsespan_core::regress::{ols, RegressionResult, SeKind};
use sparsespan_core::spanning::{LossCurve, SelectionMode, SpanningConfig, SpanningEngine, SpanningResult};
use sparsespan_core::synth::{run_experiment, McDesign};
use sparsespan_core::utility::{DEFAULT_N1, DEFAULT_N2};

use crate::config::ConfigFile;
use crate::output::{versioned, ManifestBuilder, Sink};
use crate::{
    BacktestArgs, CiArgs, Cli, Command, DominanceArgs, LossCurveArgs, McArgs, MetricsArgs, RegressArgs, SpanArgs,
    SpanningArgs,
};

const DEFAULT_Q_MAX: usize = 10;

struct Ctx<'a> {
    cfg: &'a ConfigFile,
    sink: Sink,
    seed: u64,
    manifest: ManifestBuilder,
}

pub fn dispatch(cli: &Cli, cfg: &ConfigFile) -> Result<()> {
    let threads = cfg.pick_opt(cli.common.threads, "threads")?;
    if let Some(n) = threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the worker pool")?;
    }
    let out: String = cfg.pick(cli.common.out.clone(), "out", "-".to_string())?;
    let name = match &cli.command {
        Command::Span(_) => "span",
        Command::LossCurve(_) => "loss-curve",
        Command::Ci(_) => "ci",
        Command::TestDominance(_) => "test-dominance",
        Command::Backtest(_) => "backtest",
        Command::Metrics(_) => "metrics",
        Command::Mc(_) => "mc",
        Command::Regress(_) => "regress",
    };
    let ctx = Ctx {
        cfg,
        sink: Sink::new(&out)?,
        seed: cfg.pick(cli.common.seed, "seed", 0)?,
        manifest: ManifestBuilder::new(name),
    };
    info!("{name}: {} worker threads", rayon::current_num_threads());
    match &cli.command {
        Command::Span(a) => span(ctx, a),
        Command::LossCurve(a) => loss_curve(ctx, a),
        Command::Ci(a) => ci(ctx, a),
        Command::TestDominance(a) => test_dominance(ctx, a),
        Command::Backtest(a) => backtest(ctx, a),
        Command::Metrics(a) => metrics(ctx, a),
        Command::Mc(a) => mc(ctx, a),
        Command::Regress(a) => regress(ctx, a),
    }
}

fn parse_enum<T: DeserializeOwned>(value: &str, what: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| anyhow!("unknown {what} `{value}`"))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<T>().map_err(|_| anyhow!("invalid {what} entry `{x}`")))
        .collect()
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| anyhow!("missing required --{flag}"))
}

impl Ctx<'_> {
    fn load(&mut self, path: &Path) -> Result<ReturnPanel> {
        let panel = load_panel(path).with_context(|| format!("cannot load panel {}", path.display()))?;
        self.manifest.input(path)?;
        Ok(panel)
    }

    fn finish<C: Serialize>(self, config: &C, seeded: bool) -> Result<()> {
        self.manifest.finish(&self.sink, config, seeded.then_some(self.seed))
    }
}

#[derive(Debug, Clone, Serialize)]
struct ResolvedSpanning {
    input: PathBuf,
    start: Option<String>,
    length: Option<usize>,
    spanning: SpanningConfig,
}

fn resolve_spanning(cfg: &ConfigFile, a: &SpanningArgs) -> Result<ResolvedSpanning> {
    let mut spanning = SpanningConfig::new(cfg.pick(a.q_max, "q-max", DEFAULT_Q_MAX)?);
    spanning.n1 = cfg.pick(a.n1, "n1", DEFAULT_N1)?;
    spanning.n2 = cfg.pick(a.n2, "n2", DEFAULT_N2)?;
    spanning.loss_tolerance = cfg.pick(a.tolerance, "tolerance", spanning.loss_tolerance)?;
    spanning.iteration_cap = cfg.pick_opt(a.iteration_cap, "iteration-cap")?;
    if let Some(m) = cfg.pick_opt::<String>(a.mode.clone(), "mode")? {
        spanning.mode = parse_enum::<SelectionMode>(&m, "mode")?;
    }
    Ok(ResolvedSpanning {
        input: required(cfg.pick_opt(a.input.clone(), "input")?, "input")?,
        start: cfg.pick_opt(a.start.clone(), "start")?,
        length: cfg.pick_opt(a.length, "length")?,
        spanning,
    })
}

/// Applies the optional estimation window.
fn estimation_panel(panel: ReturnPanel, r: &ResolvedSpanning) -> Result<ReturnPanel> {
    match (&r.start, r.length) {
        (None, None) => Ok(panel),
        (start, length) => {
            let s = match start {
                Some(d) => {
                    let date = parse_date(d).ok_or_else(|| anyhow!("invalid --start date `{d}`"))?;
                    panel
                        .date_position(date)
                        .ok_or_else(|| anyhow!("--start {d} is after the last panel date"))?
                }
                None => 0,
            };
            let len = length.unwrap_or(panel.n_periods() - s);
            Ok(window_and_filter(&panel, panel.dates()[s], len)?)
        }
    }
}

#[derive(Serialize)]
struct SpanReport<'a> {
    observations: usize,
    universe: usize,
    utilities: usize,
    support: &'a [String],
    loss: f64,
    stop_reason: sparsespan_core::spanning::StopReason,
    mode: SelectionMode,
    q_max: usize,
    iteration_cap: usize,
    loss_tolerance: f64,
    trace: &'a [sparsespan_core::spanning::TraceStep],
    argmax_utility: usize,
    argmax_weights: Vec<(String, f64)>,
}

fn span_report<'a>(panel: &ReturnPanel, n_utilities: usize, r: &'a SpanningResult) -> SpanReport<'a> {
    SpanReport {
        observations: panel.n_periods(),
        universe: panel.n_assets(),
        utilities: n_utilities,
        support: &r.names,
        loss: r.loss,
        stop_reason: r.stop_reason,
        mode: r.mode,
        q_max: r.q_max,
        iteration_cap: r.iteration_cap,
        loss_tolerance: r.loss_tolerance,
        trace: &r.trace,
        argmax_utility: r.argmax_utility,
        argmax_weights: r.argmax_portfolio().named(panel),
    }
}

fn write_per_utility(buf: &mut Vec<u8>, r: &SpanningResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(buf);
    w.write_record(["utility", "full", "sparse", "gap"])?;
    for (i, o) in r.per_utility.iter().enumerate() {
        w.write_record([i.to_string(), o.full.to_string(), o.sparse.to_string(), (o.full - o.sparse).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_trace(buf: &mut Vec<u8>, r: &SpanningResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(buf);
    w.write_record(["step", "asset", "loss"])?;
    for (i, s) in r.trace.iter().enumerate() {
        w.write_record([(i + 1).to_string(), s.name.clone(), s.loss.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn span(mut ctx: Ctx, a: &SpanArgs) -> Result<()> {
    let r = resolve_spanning(ctx.cfg, &a.spanning)?;
    let lp_dump: Option<PathBuf> = ctx.cfg.pick_opt(a.lp_dump.clone(), "lp-dump")?;
    let panel = estimation_panel(ctx.load(&r.input)?, &r)?;
    info!("span: {} periods, {} assets", panel.n_periods(), panel.n_assets());
    let engine = SpanningEngine::new(&panel, r.spanning.n1, r.spanning.n2)?;
    let result = engine.fss_select(&r.spanning)?;
    info!("span: {} assets selected, loss {:.3e}", result.support.len(), result.loss);

    if let Some(path) = &lp_dump {
        let u = &engine.utilities()[result.argmax_utility];
        let inst = UtilityLpInstance::new(&panel, u, &result.support)?;
        std::fs::write(path, inst.lp.to_lp_string()).with_context(|| format!("cannot write {}", path.display()))?;
    }
    ctx.sink.primary("span.json", &versioned("span", &span_report(&panel, engine.utilities().len(), &result))?)?;
    ctx.sink.side("trace.csv", |b| write_trace(b, &result))?;
    ctx.sink.side("per_utility.csv", |b| write_per_utility(b, &result))?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        #[serde(flatten)]
        spanning: &'a ResolvedSpanning,
        lp_dump: Option<PathBuf>,
    }
    let resolved = Resolved { spanning: &r, lp_dump };
    ctx.finish(&resolved, false)
}

fn loss_curve(mut ctx: Ctx, a: &LossCurveArgs) -> Result<()> {
    let r = resolve_spanning(ctx.cfg, &a.spanning)?;
    let panel = estimation_panel(ctx.load(&r.input)?, &r)?;
    let q_values: Vec<usize> = match ctx.cfg.pick_opt::<String>(a.q_values.clone(), "q-values")? {
        Some(s) => parse_list(&s, "q-values")?,
        None => (1..=r.spanning.q_max.min(panel.n_assets())).collect(),
    };
    let with_ci = ctx.cfg.pick(a.with_ci, "with-ci", false)?;
    let alpha = ctx.cfg.pick(a.alpha, "alpha", SubsampleConfig::default().alpha)?;
    let engine = SpanningEngine::new(&panel, r.spanning.n1, r.spanning.n2)?;
    let mut curve: LossCurve = engine.loss_curve(&q_values, &r.spanning)?;
    if with_ci {
        let sc = SubsampleConfig {
            alpha,
            ..SubsampleConfig::default()
        };
        for p in &mut curve.points {
            let cfg = SpanningConfig {
                q_max: p.q,
                iteration_cap: None,
                ..r.spanning.clone()
            };
            let res = engine.fss_select(&cfg)?;
            let ci = subsample_ci(&panel, &res, &sc)?;
            info!("loss-curve: q={} interval [{:.3e}, {:.3e}]", p.q, ci.lower, ci.upper);
            p.ci = Some([ci.lower, ci.upper]);
        }
    }
    ctx.sink.primary("loss_curve.json", &versioned("loss-curve", &curve)?)?;
    ctx.sink.side("loss_curve.csv", |b| Ok(curve.write_csv(b)?))?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        #[serde(flatten)]
        spanning: &'a ResolvedSpanning,
        q_values: &'a [usize],
        with_ci: bool,
        alpha: f64,
    }
    let resolved = Resolved {
        spanning: &r,
        q_values: &q_values,
        with_ci,
        alpha,
    };
    ctx.finish(&resolved, false)
}

fn ci(mut ctx: Ctx, a: &CiArgs) -> Result<()> {
    let r = resolve_spanning(ctx.cfg, &a.spanning)?;
    let mut sc = SubsampleConfig::default();
    sc.alpha = ctx.cfg.pick(a.alpha, "alpha", sc.alpha)?;
    sc.block_length = ctx.cfg.pick_opt(a.subsample_length, "subsample-length")?;
    if let Some(s) = ctx.cfg.pick_opt::<String>(a.supremum.clone(), "supremum")? {
        sc.supremum = parse_enum::<SupremumSet>(&s, "supremum")?;
    }
    sc.trim_below = ctx.cfg.pick_opt(a.trim_below, "trim-below")?;
    let panel = estimation_panel(ctx.load(&r.input)?, &r)?;
    let engine = SpanningEngine::new(&panel, r.spanning.n1, r.spanning.n2)?;
    let result = engine.fss_select(&r.spanning)?;
    let interval = subsample_ci(&panel, &result, &sc)?;
    info!("ci: loss {:.3e} in [{:.3e}, {:.3e}]", interval.loss, interval.lower, interval.upper);
    #[derive(Serialize)]
    struct Doc<'a> {
        support: &'a [String],
        #[serde(flatten)]
        interval: &'a sparsespan_core::inference::ConfidenceInterval,
    }
    let doc = Doc {
        support: &result.names,
        interval: &interval,
    };
    ctx.sink.primary("ci.json", &versioned("ci", &doc)?)?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        #[serde(flatten)]
        spanning: &'a ResolvedSpanning,
        subsample: &'a SubsampleConfig,
    }
    let resolved = Resolved {
        spanning: &r,
        subsample: &sc,
    };
    ctx.finish(&resolved, false)
}

/// Parses `ASSET` or `ASSET:w,ASSET:w,...` against the panel's asset names.
fn parse_portfolio(panel: &ReturnPanel, spec: &str) -> Result<SimplexPortfolio> {
    let mut assets = Vec::new();
    let mut weights = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, w) = match part.split_once(':') {
            Some((n, w)) => (n.trim(), w.trim().parse::<f64>().map_err(|_| anyhow!("invalid weight in `{part}`"))?),
            None => (part, 1.0),
        };
        let i = panel.asset_index(name).ok_or_else(|| anyhow!("unknown asset `{name}`"))?;
        assets.push(i);
        weights.push(w);
    }
    if assets.is_empty() {
        bail!("empty portfolio specification");
    }
    Ok(SimplexPortfolio::new(assets, weights)?)
}

fn test_dominance(mut ctx: Ctx, a: &DominanceArgs) -> Result<()> {
    let cfg = ctx.cfg;
    let input: PathBuf = required(cfg.pick_opt(a.input.clone(), "input")?, "input")?;
    let bench: String = required(cfg.pick_opt(a.benchmark.clone(), "benchmark")?, "benchmark")?;
    let cand: String = required(cfg.pick_opt(a.candidate.clone(), "candidate")?, "candidate")?;
    let mut dc = DominanceConfig {
        seed: ctx.seed,
        ..DominanceConfig::default()
    };
    dc.replications = cfg.pick(a.replications, "replications", dc.replications)?;
    dc.block_length = cfg.pick_opt(a.block_length, "block-length")?;
    dc.recenter = cfg.pick(a.recenter, "recenter", dc.recenter)?;
    if let Some(z) = cfg.pick_opt::<String>(a.z_grid.clone(), "z-grid")? {
        dc.z_grid = Some(parse_list(&z, "z-grid")?);
    }
    let panel = ctx.load(&input)?;
    let kappa = parse_portfolio(&panel, &bench)?;
    let lambda = parse_portfolio(&panel, &cand)?;
    let res = nondominance_test(&kappa.returns(&panel), &lambda.returns(&panel), &dc)?;
    info!("test-dominance: statistic {:.4e}, p-value {:.4}", res.statistic, res.p_value);
    ctx.sink.primary("dominance.json", &versioned("test-dominance", &res)?)?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        input: &'a Path,
        benchmark: &'a str,
        candidate: &'a str,
        #[serde(flatten)]
        test: &'a DominanceConfig,
    }
    let resolved = Resolved {
        input: &input,
        benchmark: &bench,
        candidate: &cand,
        test: &dc,
    };
    ctx.finish(&resolved, true)
}

/// The `RF` column of `path`, aligned to `dates`.
fn risk_free(ctx: &mut Ctx, path: &Path, dates: &[String]) -> Result<Vec<f64>> {
    let f = ctx.load(path)?;
    let i = f
        .asset_index("RF")
        .ok_or_else(|| anyhow!("{} has no RF column", path.display()))?;
    let by_date: HashMap<String, usize> = f.dates().iter().enumerate().map(|(t, d)| (d.to_string(), t)).collect();
    dates
        .iter()
        .map(|d| {
            let t = by_date
                .get(d)
                .ok_or_else(|| anyhow!("{} has no row for {d}", path.display()))?;
            if !f.is_observed(*t, i) {
                bail!("RF is missing on {d}");
            }
            Ok(f.value(*t, i))
        })
        .collect()
}

fn backtest(mut ctx: Ctx, a: &BacktestArgs) -> Result<()> {
    let r = resolve_spanning(ctx.cfg, &a.spanning)?;
    let mut bc = BacktestConfig::new(r.spanning.clone());
    bc.window = ctx.cfg.pick(a.window, "window", bc.window)?;
    bc.step = ctx.cfg.pick(a.step, "step", bc.step)?;
    bc.trc = ctx.cfg.pick(a.trc, "trc", bc.trc)?;
    if let Some(s) = ctx.cfg.pick_opt::<String>(a.strategies.clone(), "strategies")? {
        bc.strategies = s
            .split(',')
            .map(str::trim)
            .filter(|x| !x.is_empty())
            .map(|x| parse_enum::<Strategy>(x, "strategy"))
            .collect::<Result<_>>()?;
    }
    let rf_path: Option<PathBuf> = ctx.cfg.pick_opt(a.rf.clone(), "rf")?;
    let panel = estimation_panel(ctx.load(&r.input)?, &r)?;
    let rf = match &rf_path {
        Some(p) => {
            let dates: Vec<String> = panel.dates().iter().map(|d| d.to_string()).collect();
            Some(risk_free(&mut ctx, p, &dates)?)
        }
        None => None,
    };
    info!("backtest: {} periods, window {}", panel.n_periods(), bc.window);
    let out = run_backtest(&panel, &bc, rf.as_deref())?;
    ctx.sink.primary(
        "backtest.json",
        &versioned(
            "backtest",
            &serde_json::json!({
                "holding_rule": out.holding_rule,
                "periods": out.dates.len(),
                "reports": out.outcomes.iter().map(|o| (o.strategy.label(), &o.report)).collect::<HashMap<_, _>>(),
            }),
        )?,
    )?;
    if let Some(dir) = ctx.sink.dir() {
        out.write_dir(dir)?;
    }
    #[derive(Serialize)]
    struct Resolved<'a> {
        input: &'a Path,
        start: &'a Option<String>,
        length: Option<usize>,
        rf: &'a Option<PathBuf>,
        #[serde(flatten)]
        backtest: &'a BacktestConfig,
    }
    let resolved = Resolved {
        input: &r.input,
        start: &r.start,
        length: r.length,
        rf: &rf_path,
        backtest: &bc,
    };
    ctx.finish(&resolved, false)
}

fn metrics(mut ctx: Ctx, a: &MetricsArgs) -> Result<()> {
    let input: PathBuf = required(ctx.cfg.pick_opt(a.input.clone(), "input")?, "input")?;
    let bench_name: Option<String> = ctx.cfg.pick_opt(a.benchmark.clone(), "benchmark")?;
    let rf_path: Option<PathBuf> = ctx.cfg.pick_opt(a.rf.clone(), "rf")?;
    let panel = ctx.load(&input)?;
    let dates: Vec<String> = panel.dates().iter().map(|d| d.to_string()).collect();
    let rf = match &rf_path {
        Some(p) => Some(risk_free(&mut ctx, p, &dates)?),
        None => {
            log::warn!("no risk-free series supplied; Sharpe ratios use zero");
            None
        }
    };
    let column = |i: usize| -> Result<Vec<f64>> {
        (0..panel.n_periods())
            .map(|t| {
                if panel.is_observed(t, i) {
                    Ok(panel.value(t, i))
                } else {
                    bail!("{} is missing on {}", panel.assets()[i], dates[t])
                }
            })
            .collect()
    };
    let benchmark = match &bench_name {
        Some(b) => Some(column(
            panel
                .asset_index(b)
                .ok_or_else(|| anyhow!("benchmark column `{b}` not found"))?,
        )?),
        None => None,
    };
    let mut reports = Vec::new();
    for (i, name) in panel.assets().iter().enumerate() {
        let is_bench = bench_name.as_deref() == Some(name.as_str());
        let rep = PerformanceReport::compute(
            &column(i)?,
            &ReportInputs {
                rf: rf.as_deref(),
                benchmark: if is_bench { None } else { benchmark.as_deref() },
                weights: None,
                trc: None,
                reference: None,
            },
        )?;
        reports.push((name.clone(), rep));
    }
    let json: serde_json::Map<String, serde_json::Value> = reports
        .iter()
        .map(|(n, r)| Ok((n.clone(), serde_json::to_value(r)?)))
        .collect::<Result<_>>()?;
    ctx.sink.primary("metrics.json", &versioned("metrics", &serde_json::json!({ "reports": json }))?)?;
    ctx.sink.side("metrics.csv", |b| Ok(write_table_csv(b, &reports)?))?;
    let resolved = serde_json::json!({ "input": input, "benchmark": bench_name, "rf": rf_path });
    ctx.finish(&resolved, false)
}

fn mc(ctx: Ctx, a: &McArgs) -> Result<()> {
    let cfg = ctx.cfg;
    let experiment: u8 = cfg.pick(a.experiment, "experiment", 2)?;
    let q = cfg.pick(a.q, "q", DEFAULT_Q_MAX)?;
    let t = cfg.pick(a.t, "t", 1000)?;
    let reps = cfg.pick(a.reps, "reps", 50)?;
    let mut design = match experiment {
        1 => McDesign::experiment_one(cfg.pick(a.n_assets, "n-assets", 49)?, t, q, reps, ctx.seed),
        2 => McDesign::experiment_two(t, q, reps, ctx.seed),
        e => bail!("unknown experiment {e}; expected 1 or 2"),
    };
    design.n1 = cfg.pick(a.n1, "n1", design.n1)?;
    design.n2 = cfg.pick(a.n2, "n2", design.n2)?;
    info!("mc: experiment {experiment}, {reps} replications of T={t}, q={q}");
    let report = run_experiment(&design)?;
    info!(
        "mc: average selected {:.2}, average loss {:.3e}",
        report.average_selected, report.average_loss
    );
    ctx.sink.primary("mc.json", &versioned("mc", &report)?)?;
    ctx.sink.side("mc_summary.csv", |b| Ok(report.write_summary_csv(b)?))?;
    ctx.sink.side("mc_records.csv", |b| Ok(report.write_records_csv(b)?))?;
    ctx.finish(&design, true)
}

#[derive(Serialize)]
struct RegressionSummary<'a> {
    series: &'a str,
    observations: usize,
    r_squared: f64,
    adj_r_squared: f64,
    se_kind: SeKind,
    coefficients: &'a [sparsespan_core::regress::Coefficient],
}

fn regress(mut ctx: Ctx, a: &RegressArgs) -> Result<()> {
    let cfg = ctx.cfg;
    let returns_path: PathBuf = required(cfg.pick_opt(a.returns.clone(), "returns")?, "returns")?;
    let factors_path: PathBuf = required(cfg.pick_opt(a.factors.clone(), "factors")?, "factors")?;
    let model: Option<String> = cfg.pick_opt(a.model.clone(), "model")?;
    let se: String = cfg.pick(a.se.clone(), "se", "newey-west".to_string())?;
    let lags: Option<usize> = cfg.pick_opt(a.nw_lags, "nw-lags")?;
    let excess: bool = cfg.pick(a.excess, "excess", true)?;
    let se_kind = match se.as_str() {
        "plain" => SeKind::Plain,
        "newey-west" | "nw" => SeKind::NeweyWest(lags),
        other => bail!("unknown standard error kind `{other}`"),
    };
    let returns = ctx.load(&returns_path)?;
    let factors = ctx.load(&factors_path)?;
    let names: Vec<String> = match &model {
        Some(m) => parse_list(m, "model")?,
        None => factors.assets().iter().filter(|n| n.as_str() != "RF").cloned().collect(),
    };
    let fidx: Vec<usize> = names
        .iter()
        .map(|n| factors.asset_index(n).ok_or_else(|| anyhow!("factor `{n}` not in {}", factors_path.display())))
        .collect::<Result<_>>()?;
    let rf_idx = if excess { factors.asset_index("RF") } else { None };
    let by_date: HashMap<_, usize> = factors.dates().iter().enumerate().map(|(t, d)| (*d, t)).collect();

    let mut results: Vec<(String, RegressionResult)> = Vec::new();
    for (i, series) in returns.assets().iter().enumerate() {
        let mut y = Vec::new();
        let mut x = vec![Vec::new(); fidx.len()];
        for (t, d) in returns.dates().iter().enumerate() {
            let Some(&ft) = by_date.get(d) else { continue };
            let observed = returns.is_observed(t, i)
                && fidx.iter().all(|&j| factors.is_observed(ft, j))
                && rf_idx.is_none_or(|j| factors.is_observed(ft, j));
            if !observed {
                continue;
            }
            y.push(returns.value(t, i) - rf_idx.map_or(0.0, |j| factors.value(ft, j)));
            for (col, &j) in x.iter_mut().zip(&fidx) {
                col.push(factors.value(ft, j));
            }
        }
        let res = ols(&y, &x, &names, se_kind).with_context(|| format!("regression of {series}"))?;
        results.push((series.clone(), res));
    }
    let summaries: Vec<RegressionSummary> = results
        .iter()
        .map(|(s, r)| RegressionSummary {
            series: s,
            observations: r.observations,
            r_squared: r.r_squared,
            adj_r_squared: r.adj_r_squared,
            se_kind: r.se_kind,
            coefficients: &r.coefficients,
        })
        .collect();
    ctx.sink.primary("regress.json", &versioned("regress", &serde_json::json!({ "results": summaries }))?)?;
    ctx.sink.side("regress.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["series", "term", "coef", "std_error", "t_stat", "p_value", "r_squared", "observations"])?;
        for (s, r) in &results {
            for c in &r.coefficients {
                w.write_record([
                    s.clone(),
                    c.name.clone(),
                    c.estimate.to_string(),
                    c.std_error.to_string(),
                    c.t_stat.to_string(),
                    c.p_value.to_string(),
                    r.r_squared.to_string(),
                    r.observations.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })?;
    let resolved = serde_json::json!({
        "returns": returns_path,
        "factors": factors_path,
        "model": names,
        "se": se_kind,
        "excess": excess,
    });
    ctx.finish(&resolved, false)
}
