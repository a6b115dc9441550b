//! Performance and risk measures for realized monthly return series.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default proportional transaction cost (35 basis points).
pub const DEFAULT_TRC: f64 = 0.0035;
pub const DEFAULT_AVERSIONS: [f64; 3] = [2.0, 4.0, 6.0];

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_sd(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)).sqrt()
}

fn need(x: &[f64], n: usize, what: &str) -> Result<()> {
    if x.len() < n {
        return Err(Error::Parameter(format!("{what} needs at least {n} observations, got {}", x.len())));
    }
    Ok(())
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Validation(format!("series lengths differ: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    /// Sample standard deviation with `T − 1` denominator.
    pub sd: f64,
    /// Adjusted Fisher–Pearson skewness `G₁`; `None` for constant series or `T < 3`.
    pub skewness: Option<f64>,
    /// Bias-adjusted excess kurtosis `G₂`; `None` for constant series or `T < 4`.
    pub kurtosis: Option<f64>,
}

pub fn moments(returns: &[f64]) -> Result<Moments> {
    need(returns, 2, "moments")?;
    let n = returns.len() as f64;
    let m = mean(returns);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for r in returns {
        let d = r - m;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    let sd = (m2 / (n - 1.0)).sqrt();
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    let constant = returns.iter().all(|r| *r == returns[0]);
    let skewness = (!constant && n >= 3.0).then(|| (n * (n - 1.0)).sqrt() / (n - 2.0) * m3 / m2.powf(1.5));
    let kurtosis = (!constant && n >= 4.0)
        .then(|| ((n + 1.0) * (m4 / (m2 * m2) - 3.0) + 6.0) * (n - 1.0) / ((n - 2.0) * (n - 3.0)));
    Ok(Moments {
        mean: m,
        sd,
        skewness,
        kurtosis,
    })
}

/// `(R̄ − R̄f) / σ`.
pub fn sharpe(returns: &[f64], rf: &[f64]) -> Result<f64> {
    need(returns, 2, "Sharpe ratio")?;
    same_len(returns, rf)?;
    let sd = sample_sd(returns);
    if sd == 0.0 {
        return Err(Error::UndefinedMeasure("Sharpe ratio of a constant series".into()));
    }
    Ok((mean(returns) - mean(rf)) / sd)
}

/// `(R̄ − R̄f) / (√2·σ₋)` with `σ₋² = Σ min(R, 0)² / (T − 1)`.
pub fn downside_sharpe(returns: &[f64], rf: &[f64]) -> Result<f64> {
    need(returns, 2, "downside Sharpe ratio")?;
    same_len(returns, rf)?;
    let down = returns.iter().map(|r| r.min(0.0).powi(2)).sum::<f64>() / (returns.len() as f64 - 1.0);
    if down == 0.0 {
        return Err(Error::UndefinedMeasure("no negative returns, downside risk is zero".into()));
    }
    Ok((mean(returns) - mean(rf)) / (2.0f64.sqrt() * down.sqrt()))
}

/// Mean upside over the benchmark divided by root-mean-square shortfall.
pub fn up_ratio(returns: &[f64], benchmark: &[f64]) -> Result<f64> {
    need(returns, 1, "UP ratio")?;
    same_len(returns, benchmark)?;
    let n = returns.len() as f64;
    let (mut up, mut down) = (0.0, 0.0);
    for (r, b) in returns.iter().zip(benchmark) {
        up += (r - b).max(0.0);
        down += (b - r).max(0.0).powi(2);
    }
    if down == 0.0 {
        return Err(Error::UndefinedMeasure("no shortfall below the benchmark".into()));
    }
    Ok((up / n) / (down / n).sqrt())
}

/// Historical value-at-risk and expected shortfall, positive for losses.
///
/// The tail cut is the `⌈(1 − level)·T⌉`-th smallest return, without interpolation.
pub fn var_es(returns: &[f64], level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Parameter(format!("confidence level must lie in (0, 1), got {level}")));
    }
    need(returns, 1, "VaR")?;
    if returns.len() < 20 {
        warn!("VaR/ES from only {} observations", returns.len());
    }
    let mut s = returns.to_vec();
    s.sort_by(f64::total_cmp);
    // the epsilon absorbs round-off in (1 − level)·T
    let k = (((1.0 - level) * s.len() as f64 - 1e-9).ceil() as usize).clamp(1, s.len());
    let cut = s[k - 1];
    let tail: Vec<f64> = s.iter().map(|r| r - cut).take_while(|d| *d <= 0.0).collect();
    Ok((-cut, -(cut + mean(&tail))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UtilityKind {
    /// `u(w) = −exp(−a·w)`, constant absolute risk aversion `a`.
    Exponential,
    /// `u(w) = w^{1−γ}/(1−γ)`, constant relative risk aversion `γ`.
    Power,
}

/// Certainty-equivalent return `c` with `E[u(1 + R)] = u(1 + c)`.
pub fn ceq(returns: &[f64], kind: UtilityKind, aversion: f64) -> Result<f64> {
    need(returns, 1, "CEQ")?;
    if !(aversion > 0.0 && aversion.is_finite()) {
        return Err(Error::Parameter(format!("risk aversion must be positive, got {aversion}")));
    }
    match kind {
        UtilityKind::Exponential => {
            let a = aversion;
            // log-mean-exp shifted by the largest exponent
            let e: Vec<f64> = returns.iter().map(|r| -a * (1.0 + r)).collect();
            let top = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lme = top + (e.iter().map(|x| (x - top).exp()).sum::<f64>() / e.len() as f64).ln();
            Ok(-lme / a - 1.0)
        }
        UtilityKind::Power => {
            let g = aversion;
            if g == 1.0 {
                return Err(Error::Parameter("power utility needs relative risk aversion != 1".into()));
            }
            if let Some(r) = returns.iter().find(|r| 1.0 + **r <= 0.0) {
                return Err(Error::Domain(format!("gross return {} is not positive", 1.0 + r)));
            }
            let k = 1.0 - g;
            let m = returns.iter().map(|r| (1.0 + r).powf(k)).sum::<f64>() / returns.len() as f64;
            Ok(m.powf(1.0 / k) - 1.0)
        }
    }
}

/// Return `θ` added to the benchmark that makes the investor indifferent
/// to the target: `E[u(1 + R_b + θ)] = E[u(1 + R_t)]`.
pub fn opportunity_cost(bench: &[f64], target: &[f64], kind: UtilityKind, aversion: f64) -> Result<f64> {
    let goal = ceq(target, kind, aversion)?;
    // CEQ is strictly increasing in a constant shift, so compare on that scale
    let f = |theta: f64| -> Result<f64> {
        let shifted: Vec<f64> = bench.iter().map(|r| r + theta).collect();
        match ceq(&shifted, kind, aversion) {
            Ok(c) => Ok(c - goal),
            Err(Error::Domain(_)) => Ok(f64::NEG_INFINITY),
            Err(e) => Err(e),
        }
    };
    let (mut lo, mut hi) = (-0.9, 0.9);
    let (flo, fhi) = (f(lo)?, f(hi)?);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if !(flo < 0.0 && fhi > 0.0) {
        return Err(Error::Bracket(format!(
            "utility gap has values {flo:e} at -0.9 and {fhi:e} at 0.9; no sign change"
        )));
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        let v = f(mid)?;
        if v == 0.0 {
            return Ok(mid);
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn check_row(w: &[f64], i: usize) -> Result<()> {
    let s: f64 = w.iter().sum();
    if w.iter().any(|x| *x < -1e-6) || (s - 1.0).abs() > 1e-6 {
        return Err(Error::Validation(format!("weight row {i} is off the simplex (sum {s})")));
    }
    Ok(())
}

/// `Σ|w_t − w_{t−1}|` per rebalance; zero for the first.
pub fn weight_changes(weights: &[Vec<f64>]) -> Result<Vec<f64>> {
    for (i, w) in weights.iter().enumerate() {
        check_row(w, i)?;
        if w.len() != weights[0].len() {
            return Err(Error::Validation("weight rows have different lengths".into()));
        }
    }
    let mut out = vec![0.0; weights.len()];
    for t in 1..weights.len() {
        out[t] = weights[t].iter().zip(&weights[t - 1]).map(|(a, b)| (a - b).abs()).sum();
    }
    Ok(out)
}

/// Average absolute weight change across consecutive rebalances.
pub fn turnover(weights: &[Vec<f64>]) -> Result<f64> {
    let c = weight_changes(weights)?;
    if c.len() < 2 {
        return Ok(0.0);
    }
    Ok(c[1..].iter().sum::<f64>() / (c.len() - 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetOfCost {
    /// `NW_t`, starting from 1 before the first period.
    pub wealth: Vec<f64>,
    /// `RTC_t = NW_t / NW_{t−1} − 1`.
    pub returns: Vec<f64>,
}

/// Net wealth `NW_{t+1} = NW_t (1 + R_{t+1}) (1 − trc·Σ|w_{t+1} − w_t|)`.
pub fn net_of_cost(returns: &[f64], weights: &[Vec<f64>], trc: f64) -> Result<NetOfCost> {
    if returns.len() != weights.len() {
        return Err(Error::Validation("one weight row per return required".into()));
    }
    if !(trc >= 0.0) {
        return Err(Error::Parameter("transaction cost rate must be nonnegative".into()));
    }
    let changes = weight_changes(weights)?;
    let mut wealth = Vec::with_capacity(returns.len());
    let mut net = Vec::with_capacity(returns.len());
    let mut nw = 1.0;
    for (r, c) in returns.iter().zip(&changes) {
        // (1 + r)(1 − k) − 1, arranged to return r exactly when k = 0
        let k = trc * c;
        let rtc = r - k * (1.0 + r);
        net.push(rtc);
        nw *= 1.0 + rtc;
        wealth.push(nw);
    }
    Ok(NetOfCost { wealth, returns: net })
}

/// `(μ_a/σ_a)·σ_b − μ_b`: return forgone by strategy `b` at `a`'s Sharpe ratio.
pub fn return_loss(a: &[f64], b: &[f64]) -> Result<f64> {
    need(a, 2, "return loss")?;
    need(b, 2, "return loss")?;
    let (sa, sb) = (sample_sd(a), sample_sd(b));
    if sa == 0.0 {
        return Err(Error::UndefinedMeasure("reference strategy has zero volatility".into()));
    }
    Ok(mean(a) / sa * sb - mean(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyedValue {
    pub kind: UtilityKind,
    pub aversion: f64,
    pub value: Option<f64>,
}

/// Every measure for one strategy; undefined measures are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub observations: usize,
    pub average: f64,
    pub standard_deviation: f64,
    pub skewness: Option<f64>,
    pub kurtosis: Option<f64>,
    pub sharpe: Option<f64>,
    pub downside_sharpe: Option<f64>,
    pub var95: f64,
    pub es95: f64,
    pub up_ratio: Option<f64>,
    pub turnover: Option<f64>,
    pub ceq: Vec<KeyedValue>,
    pub opportunity_cost: Vec<KeyedValue>,
    pub return_loss: Option<f64>,
    pub net_of_cost_series: Option<Vec<f64>>,
}

/// Optional inputs to [`PerformanceReport::compute`].
#[derive(Debug, Clone, Default)]
pub struct ReportInputs<'a> {
    /// Risk-free series; zero when absent.
    pub rf: Option<&'a [f64]>,
    /// Benchmark for the UP ratio and the opportunity cost.
    pub benchmark: Option<&'a [f64]>,
    /// Weight row per period over a fixed asset index.
    pub weights: Option<&'a [Vec<f64>]>,
    pub trc: Option<f64>,
    /// Reference net-of-cost series for the return loss.
    pub reference: Option<&'a [f64]>,
}

fn defined(r: Result<f64>, what: &str) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMeasure(m)) | Err(Error::Domain(m)) | Err(Error::Bracket(m)) => {
            warn!("{what} undefined: {m}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

impl PerformanceReport {
    pub fn compute(returns: &[f64], inputs: &ReportInputs<'_>) -> Result<Self> {
        let m = moments(returns)?;
        let zeros = vec![0.0; returns.len()];
        let rf = match inputs.rf {
            Some(rf) => rf,
            None => &zeros,
        };
        let (var95, es95) = var_es(returns, 0.95)?;
        let kinds = [UtilityKind::Exponential, UtilityKind::Power];
        let mut ceqs = Vec::new();
        let mut ocs = Vec::new();
        for kind in kinds {
            for a in DEFAULT_AVERSIONS {
                ceqs.push(KeyedValue {
                    kind,
                    aversion: a,
                    value: defined(ceq(returns, kind, a), "CEQ")?,
                });
                if let Some(b) = inputs.benchmark {
                    ocs.push(KeyedValue {
                        kind,
                        aversion: a,
                        value: defined(opportunity_cost(b, returns, kind, a), "opportunity cost")?,
                    });
                }
            }
        }
        let (turnover, net) = match inputs.weights {
            Some(w) => {
                let nc = net_of_cost(returns, w, inputs.trc.unwrap_or(DEFAULT_TRC))?;
                (Some(turnover(w)?), Some(nc.returns))
            }
            None => (None, None),
        };
        let return_loss = match (inputs.reference, &net) {
            (Some(r), Some(n)) => defined(return_loss(r, n), "return loss")?,
            (Some(r), None) => defined(return_loss(r, returns), "return loss")?,
            _ => None,
        };
        Ok(Self {
            observations: returns.len(),
            average: m.mean,
            standard_deviation: m.sd,
            skewness: m.skewness,
            kurtosis: m.kurtosis,
            sharpe: defined(sharpe(returns, rf), "Sharpe ratio")?,
            downside_sharpe: defined(downside_sharpe(returns, rf), "downside Sharpe ratio")?,
            var95,
            es95,
            up_ratio: match inputs.benchmark {
                Some(b) => defined(up_ratio(returns, b), "UP ratio")?,
                None => None,
            },
            turnover,
            ceq: ceqs,
            opportunity_cost: ocs,
            return_loss,
            net_of_cost_series: net,
        })
    }

    /// `(measure, value)` rows; undefined measures are empty strings.
    pub fn rows(&self) -> Vec<(String, Option<f64>)> {
        let mut out = vec![
            ("average".to_string(), Some(self.average)),
            ("standard_deviation".into(), Some(self.standard_deviation)),
            ("skewness".into(), self.skewness),
            ("kurtosis".into(), self.kurtosis),
            ("sharpe".into(), self.sharpe),
            ("downside_sharpe".into(), self.downside_sharpe),
            ("var95".into(), Some(self.var95)),
            ("es95".into(), Some(self.es95)),
            ("up_ratio".into(), self.up_ratio),
            ("turnover".into(), self.turnover),
        ];
        let tag = |k: UtilityKind| match k {
            UtilityKind::Exponential => "ara",
            UtilityKind::Power => "rra",
        };
        for c in &self.ceq {
            out.push((format!("ceq_{}{}", tag(c.kind), c.aversion), c.value));
        }
        for c in &self.opportunity_cost {
            out.push((format!("theta_{}{}", tag(c.kind), c.aversion), c.value));
        }
        out.push(("return_loss".into(), self.return_loss));
        out
    }
}

/// Measures as rows, strategies as columns.
pub fn write_table_csv<W: std::io::Write>(w: W, reports: &[(String, PerformanceReport)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["measure".to_string()];
    header.extend(reports.iter().map(|(n, _)| n.clone()));
    out.write_record(&header)?;
    let rows: Vec<Vec<(String, Option<f64>)>> = reports.iter().map(|(_, r)| r.rows()).collect();
    let names: Vec<String> = rows
        .iter()
        .max_by_key(|r| r.len())
        .map(|r| r.iter().map(|(n, _)| n.clone()).collect())
        .unwrap_or_default();
    for name in names {
        let mut rec = vec![name.clone()];
        for r in &rows {
            let v = r.iter().find(|(n, _)| *n == name).and_then(|(_, v)| *v);
            rec.push(v.map(|v| v.to_string()).unwrap_or_default());
        }
        out.write_record(&rec)?;
    }
    out.flush().map_err(|e| Error::io("csv output", e))?;
    Ok(())
}
