//! Rolling-window out-of-sample evaluation of the sparse strategy and 1/N.

use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{max_expected_utility, SimplexPortfolio};
use crate::metrics::{PerformanceReport, ReportInputs, DEFAULT_TRC};
use crate::panel::ReturnPanel;
use crate::spanning::{SpanningConfig, SpanningEngine};
use crate::utility::RussellSeoUtility;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    SparseSsd,
    OneOverN,
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Strategy::SparseSsd => "sparse-ssd",
            Strategy::OneOverN => "one-over-n",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub window: usize,
    pub step: usize,
    pub spanning: SpanningConfig,
    pub strategies: Vec<Strategy>,
    pub trc: f64,
}

impl BacktestConfig {
    pub fn new(spanning: SpanningConfig) -> Self {
        Self {
            window: 240,
            step: 1,
            spanning,
            strategies: vec![Strategy::SparseSsd, Strategy::OneOverN],
            trc: DEFAULT_TRC,
        }
    }

    fn validate(&self, t: usize) -> Result<()> {
        if self.window == 0 || self.step == 0 {
            return Err(Error::Parameter("window and step must be positive".into()));
        }
        if self.window + 1 > t {
            return Err(Error::Range(format!(
                "window {} needs at least {} periods, panel has {t}",
                self.window,
                self.window + 1
            )));
        }
        if self.strategies.is_empty() {
            return Err(Error::Parameter("at least one strategy required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestRecord {
    pub strategy: Strategy,
    /// Date of the realized (held-out) period.
    pub date: String,
    pub train_start: String,
    pub train_end: String,
    /// Assets surviving the missing-data filter in the window.
    pub universe: usize,
    pub support: Vec<String>,
    pub q: usize,
    /// Diversification loss at selection; `None` for 1/N.
    pub loss: Option<f64>,
    /// Held weights as panel asset indices and weights.
    pub weights: SimplexPortfolio,
    pub realized: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyOutcome {
    pub strategy: Strategy,
    pub realized: Vec<f64>,
    pub wealth: Vec<f64>,
    pub report: PerformanceReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestOutput {
    pub schema_version: u32,
    pub dates: Vec<String>,
    pub records: Vec<BacktestRecord>,
    pub outcomes: Vec<StrategyOutcome>,
    /// Which portfolio is held from the selected support.
    pub holding_rule: String,
}

pub const HOLDING_RULE: &str = "sparse optimizer of the utility attaining the loss when the loss exceeds the \
tolerance; otherwise the sparse optimizer of the equal-mixture utility on the selected support";

/// `W_t = ∏_{s≤t}(1 + R_s)`.
pub fn cumulative_wealth(realized: &[f64]) -> Vec<f64> {
    let mut w = 1.0;
    realized
        .iter()
        .map(|r| {
            if 1.0 + r <= 0.0 {
                warn!("gross return {} is not positive; wealth is wiped out", 1.0 + r);
            }
            w *= 1.0 + r;
            w
        })
        .collect()
}

/// Maps window-local weights back to panel columns.
fn to_global(panel: &ReturnPanel, train: &ReturnPanel, local: &SimplexPortfolio) -> SimplexPortfolio {
    SimplexPortfolio {
        assets: local
            .assets
            .iter()
            .map(|&i| panel.asset_index(&train.assets()[i]).expect("window assets come from the panel"))
            .collect(),
        weights: local.weights.clone(),
    }
}

fn realize(panel: &ReturnPanel, t: usize, w: &SimplexPortfolio) -> f64 {
    w.assets
        .iter()
        .zip(&w.weights)
        .map(|(&i, &x)| {
            if panel.is_observed(t, i) {
                x * panel.value(t, i)
            } else {
                warn!("{} has no return on {}; counted as zero", panel.assets()[i], panel.dates()[t]);
                0.0
            }
        })
        .sum()
}

fn sparse_weights(train: &ReturnPanel, cfg: &SpanningConfig) -> Result<(SimplexPortfolio, Vec<usize>, f64)> {
    let engine = SpanningEngine::new(train, cfg.n1, cfg.n2)?;
    let res = engine.fss_select(cfg)?;
    let held = if res.loss > cfg.loss_tolerance {
        res.argmax_portfolio().clone()
    } else {
        let u = RussellSeoUtility::equal_mixture(engine.grid());
        max_expected_utility(train, &u, &res.support)?.into_optimal()?.weights
    };
    Ok((held, res.support, res.loss))
}

/// Runs every configured strategy over rolling windows.
///
/// `rf` holds one risk-free rate per panel period; zero when absent.
pub fn run_backtest(panel: &ReturnPanel, config: &BacktestConfig, rf: Option<&[f64]>) -> Result<BacktestOutput> {
    let t = panel.n_periods();
    config.validate(t)?;
    if let Some(rf) = rf {
        if rf.len() != t {
            return Err(Error::Validation("risk-free series must cover every panel period".into()));
        }
    }
    let starts: Vec<usize> = (0..).map(|k| k * config.step).take_while(|s| s + config.window < t).collect();

    let per_date: Vec<Vec<BacktestRecord>> = starts
        .par_iter()
        .map(|&s| {
            let train = panel.window_rows(s, config.window)?;
            let held_out = s + config.window;
            let mut out = Vec::new();
            for &strategy in &config.strategies {
                let (weights, support, loss) = match strategy {
                    Strategy::SparseSsd => {
                        let (w, support, loss) = sparse_weights(&train, &config.spanning)?;
                        let names = support.iter().map(|&i| train.assets()[i].clone()).collect::<Vec<_>>();
                        (to_global(panel, &train, &w), names, Some(loss))
                    }
                    Strategy::OneOverN => {
                        let all: Vec<usize> = (0..train.n_assets()).collect();
                        let w = SimplexPortfolio::uniform(all);
                        (to_global(panel, &train, &w), train.assets().to_vec(), None)
                    }
                };
                out.push(BacktestRecord {
                    strategy,
                    date: panel.dates()[held_out].to_string(),
                    train_start: train.dates()[0].to_string(),
                    train_end: train.dates()[config.window - 1].to_string(),
                    universe: train.n_assets(),
                    q: support.len(),
                    support,
                    loss,
                    realized: realize(panel, held_out, &weights),
                    weights,
                })
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let records: Vec<BacktestRecord> = per_date.into_iter().flatten().collect();
    let dates: Vec<String> = starts.iter().map(|s| panel.dates()[s + config.window].to_string()).collect();
    let rf_out: Option<Vec<f64>> = rf.map(|r| starts.iter().map(|s| r[s + config.window]).collect());
    if rf.is_none() {
        warn!("no risk-free series supplied; Sharpe ratios use zero");
    }

    let series = |s: Strategy| -> (Vec<f64>, Vec<Vec<f64>>) {
        records
            .iter()
            .filter(|r| r.strategy == s)
            .map(|r| (r.realized, r.weights.dense(panel.n_assets())))
            .unzip()
    };
    let baseline = config
        .strategies
        .contains(&Strategy::OneOverN)
        .then(|| series(Strategy::OneOverN).0);
    let mut outcomes = Vec::new();
    let mut sparse_net: Option<Vec<f64>> = None;
    for &strategy in &config.strategies {
        let (realized, weights) = series(strategy);
        let benchmark = match strategy {
            Strategy::SparseSsd => baseline.as_deref(),
            Strategy::OneOverN => None,
        };
        let report = PerformanceReport::compute(
            &realized,
            &ReportInputs {
                rf: rf_out.as_deref(),
                benchmark,
                weights: Some(&weights),
                trc: Some(config.trc),
                reference: match strategy {
                    Strategy::OneOverN => sparse_net.as_deref(),
                    Strategy::SparseSsd => None,
                },
            },
        )?;
        if strategy == Strategy::SparseSsd {
            sparse_net = report.net_of_cost_series.clone();
        }
        outcomes.push(StrategyOutcome {
            strategy,
            wealth: cumulative_wealth(&realized),
            realized,
            report,
        });
    }
    Ok(BacktestOutput {
        schema_version: SCHEMA_VERSION,
        dates,
        records,
        outcomes,
        holding_rule: HOLDING_RULE.to_string(),
    })
}

impl BacktestOutput {
    /// Writes `records.csv`, `wealth.csv` and `report.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        let path = dir.join("records.csv");
        let f = std::fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = csv::Writer::from_writer(f);
        w.write_record([
            "schema_version",
            "strategy",
            "date",
            "train_start",
            "train_end",
            "universe",
            "q",
            "loss",
            "realized",
            "weights",
        ])?;
        for r in &self.records {
            let weights = r
                .weights
                .assets
                .iter()
                .zip(&r.weights.weights)
                .filter(|(_, w)| **w != 0.0)
                .map(|(a, w)| format!("{a}:{w}"))
                .collect::<Vec<_>>()
                .join(";");
            w.write_record([
                SCHEMA_VERSION.to_string(),
                r.strategy.label().to_string(),
                r.date.clone(),
                r.train_start.clone(),
                r.train_end.clone(),
                r.universe.to_string(),
                r.q.to_string(),
                r.loss.map(|l| l.to_string()).unwrap_or_default(),
                r.realized.to_string(),
                weights,
            ])?;
        }
        w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;

        let path = dir.join("wealth.csv");
        let f = std::fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = csv::Writer::from_writer(f);
        let mut header = vec!["date".to_string()];
        header.extend(self.outcomes.iter().map(|o| o.strategy.label().to_string()));
        w.write_record(&header)?;
        for (i, d) in self.dates.iter().enumerate() {
            let mut row = vec![d.clone()];
            row.extend(self.outcomes.iter().map(|o| o.wealth[i].to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;

        let path = dir.join("report.json");
        let reports: serde_json::Map<String, serde_json::Value> = self
            .outcomes
            .iter()
            .map(|o| Ok((o.strategy.label().to_string(), serde_json::to_value(&o.report)?)))
            .collect::<Result<_>>()?;
        let doc = serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "holding_rule": self.holding_rule,
            "periods": self.dates.len(),
            "first_date": self.dates.first(),
            "last_date": self.dates.last(),
            "reports": reports,
        });
        let text = serde_json::to_string_pretty(&doc)?;
        std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::monthly_dates;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(window: usize, q: usize) -> BacktestConfig {
        BacktestConfig {
            window,
            ..BacktestConfig::new(SpanningConfig {
                n1: 6,
                n2: 3,
                ..SpanningConfig::new(q)
            })
        }
    }

    fn random_panel(seed: u64, p: usize, t: usize) -> ReturnPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols = (0..p)
            .map(|_| (0..t).map(|_| (rng.gen::<f64>() - 0.45) * 0.2).collect())
            .collect();
        ReturnPanel::synthetic(cols).unwrap()
    }

    #[test]
    fn wealth_examples() {
        assert_eq!(cumulative_wealth(&[0.0; 3]), vec![1.0; 3]);
        let w = cumulative_wealth(&[0.1, -0.1]);
        assert!((w[0] - 1.1).abs() < 1e-15 && (w[1] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn single_asset_universe() {
        let p = random_panel(1, 1, 30);
        let out = run_backtest(&p, &cfg(12, 3), None).unwrap();
        let sparse = &out.outcomes[0];
        assert_eq!(sparse.realized, p.column(0)[12..].to_vec());
        assert!(out.records.iter().all(|r| r.weights.weights == vec![1.0]));
    }

    #[test]
    fn one_over_n_on_identical_assets() {
        let base = random_panel(2, 1, 25);
        let p = ReturnPanel::synthetic(vec![base.column(0).to_vec(), base.column(0).to_vec()]).unwrap();
        let c = BacktestConfig {
            strategies: vec![Strategy::OneOverN],
            ..cfg(10, 1)
        };
        let out = run_backtest(&p, &c, None).unwrap();
        for (r, x) in out.outcomes[0].realized.iter().zip(&base.column(0)[10..]) {
            assert!((r - x).abs() < 1e-15);
        }
    }

    #[test]
    fn dominant_asset_is_held_throughout() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = 36;
        let others: Vec<Vec<f64>> = (0..3).map(|_| (0..t).map(|_| rng.gen_range(-0.1..0.05)).collect()).collect();
        let top: Vec<f64> = (0..t)
            .map(|s| others.iter().map(|c| c[s]).fold(f64::NEG_INFINITY, f64::max) + 0.01)
            .collect();
        let mut cols = vec![top.clone()];
        cols.extend(others);
        let p = ReturnPanel::synthetic(cols).unwrap();
        let out = run_backtest(&p, &cfg(24, 2), None).unwrap();
        let sparse: Vec<&BacktestRecord> = out.records.iter().filter(|r| r.strategy == Strategy::SparseSsd).collect();
        assert!(sparse.iter().all(|r| r.support == vec!["A1"] && r.weights.dense(4) == vec![1.0, 0.0, 0.0, 0.0]));
        let expect = cumulative_wealth(&top[24..]);
        assert_eq!(out.outcomes[0].wealth, expect);
    }

    #[test]
    fn no_look_ahead() {
        let p = random_panel(4, 4, 40);
        let base = run_backtest(&p, &cfg(20, 2), None).unwrap();
        let cut = 28;
        let cols: Vec<Vec<f64>> = (0..4)
            .map(|i| p.column(i).iter().enumerate().map(|(t, x)| if t > cut { x * -3.0 + 0.1 } else { *x }).collect())
            .collect();
        let q = ReturnPanel::from_columns(p.dates().to_vec(), p.assets().to_vec(), cols).unwrap();
        let pert = run_backtest(&q, &cfg(20, 2), None).unwrap();
        // windows ending at or before the cut use identical data
        for (a, b) in base.records.iter().zip(&pert.records) {
            let held_out = p.dates().iter().position(|d| d.to_string() == a.date).unwrap();
            if held_out <= cut {
                assert_eq!(a.weights, b.weights);
                assert_eq!(a.support, b.support);
            }
        }
    }

    #[test]
    fn accounting_identity_and_simplex_rows() {
        let p = random_panel(5, 5, 30);
        let out = run_backtest(&p, &cfg(18, 2), None).unwrap();
        for r in &out.records {
            let t = p.dates().iter().position(|d| d.to_string() == r.date).unwrap();
            let dot: f64 = r.weights.assets.iter().zip(&r.weights.weights).map(|(&i, w)| w * p.value(t, i)).sum();
            assert_eq!(dot, r.realized);
            r.weights.validate(1e-9).unwrap();
        }
        assert_eq!(out.dates.len(), 12);
        assert_eq!(out.records.len(), 24);
    }

    #[test]
    fn gaps_shrink_the_universe() {
        let dates = monthly_dates(2001, 1, 16);
        let mut cols: Vec<Vec<Option<f64>>> = vec![
            (0..16).map(|t| Some(0.01 * (t % 3) as f64)).collect(),
            (0..16).map(|t| Some(-0.01 * (t % 4) as f64)).collect(),
            (0..16).map(|t| Some(0.002 * t as f64)).collect(),
        ];
        cols[1][2] = None;
        let p = ReturnPanel::new(dates, vec!["X".into(), "Y".into(), "Z".into()], cols).unwrap();
        let c = BacktestConfig {
            strategies: vec![Strategy::OneOverN],
            ..cfg(8, 1)
        };
        let out = run_backtest(&p, &c, None).unwrap();
        assert_eq!(out.records[0].universe, 2);
        assert_eq!(out.records.last().unwrap().universe, 3);
    }

    #[test]
    fn window_too_long() {
        let p = random_panel(6, 2, 10);
        assert!(matches!(run_backtest(&p, &cfg(10, 1), None), Err(Error::Range(_))));
    }

    #[test]
    fn writes_outputs() {
        let p = random_panel(7, 3, 16);
        let out = run_backtest(&p, &cfg(10, 2), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        out.write_dir(dir.path()).unwrap();
        for f in ["records.csv", "wealth.csv", "report.json"] {
            assert!(dir.path().join(f).exists());
        }
        let wealth = std::fs::read_to_string(dir.path().join("wealth.csv")).unwrap();
        assert_eq!(wealth.lines().count(), 7);
    }
}
