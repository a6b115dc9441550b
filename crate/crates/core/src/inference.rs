//! Subsampling confidence intervals for the diversification loss and a
//! block-bootstrap test of pairwise non-dominance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{lpm_series, ActiveSetSolver};
use crate::panel::{support_bounds, ReturnPanel};
use crate::spanning::SpanningResult;
use crate::utility::{build_grid, enumerate_utilities, RussellSeoUtility, DEFAULT_N1};

/// Which utilities enter the supremum of the subsample statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SupremumSet {
    /// The whole utility class used by the spanning run.
    #[default]
    Utilities,
    /// Single ramps only, i.e. one lower partial moment per grid threshold.
    Thresholds,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubsampleConfig {
    /// Subsample length `b_T`; `⌊T^0.6⌋` when unset.
    pub block_length: Option<usize>,
    pub alpha: f64,
    pub supremum: SupremumSet,
    /// Drops utilities with weight on grid points below this return.
    pub trim_below: Option<f64>,
}

impl Default for SubsampleConfig {
    fn default() -> Self {
        Self {
            block_length: None,
            alpha: 0.05,
            supremum: SupremumSet::Utilities,
            trim_below: None,
        }
    }
}

pub fn default_subsample_length(t: usize) -> usize {
    ((t as f64).powf(0.6).floor() as usize).clamp(1, t.max(1))
}

pub fn default_block_length(t: usize) -> usize {
    ((t as f64).cbrt().ceil() as usize).max(1)
}

impl SubsampleConfig {
    pub fn resolve_length(&self, t: usize) -> Result<usize> {
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::Parameter(format!("alpha must lie in (0, 0.5), got {}", self.alpha)));
        }
        let b = self.block_length.unwrap_or_else(|| default_subsample_length(t));
        if b == 0 || b > t {
            return Err(Error::Parameter(format!("subsample length {b} outside 1..={t}")));
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    /// Empirical `1 − α` quantile of the subsample statistics.
    pub quantile: f64,
    pub loss: f64,
    pub alpha: f64,
    pub subsample_length: usize,
    /// One entry per subsample start, in order.
    pub statistics: Vec<f64>,
}

/// The `⌈level·n⌉`-th order statistic.
pub fn order_quantile(values: &[f64], level: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = ((level * v.len() as f64 - 1e-9).ceil() as usize).clamp(1, v.len());
    v[k - 1]
}

/// Interval from the loss, the subsample quantile and the sample size.
/// A negative quantile is read as zero so that the bounds stay ordered.
pub fn interval(loss: f64, quantile: f64, t: usize) -> (f64, f64) {
    let h = quantile.max(0.0) / (t as f64).sqrt();
    ((loss - h).max(0.0), loss + h)
}

fn selected_utilities(us: &[RussellSeoUtility], cfg: &SubsampleConfig) -> Vec<usize> {
    (0..us.len())
        .filter(|&k| {
            let u = &us[k];
            let set_ok = match cfg.supremum {
                SupremumSet::Utilities => true,
                SupremumSet::Thresholds => u.ramp_index().is_some(),
            };
            let trim_ok = cfg.trim_below.is_none_or(|c| {
                u.weights()
                    .iter()
                    .zip(u.grid_points())
                    .all(|(v, z)| *v == 0.0 || *z >= c)
            });
            set_ok && trim_ok
        })
        .collect()
}

/// Fast subsampling interval reusing the full-sample sparse optimizers.
pub fn subsample_ci(panel: &ReturnPanel, spanning: &SpanningResult, config: &SubsampleConfig) -> Result<ConfidenceInterval> {
    panel.require_observed()?;
    let t = panel.n_periods();
    let b = config.resolve_length(t)?;
    let grid = build_grid(support_bounds(panel)?, spanning.n1)?;
    let us = enumerate_utilities(&grid, spanning.n2)?;
    if us.len() != spanning.per_utility.len() {
        return Err(Error::Validation("spanning result does not match the panel's utility class".into()));
    }
    let chosen = selected_utilities(&us, config);
    if chosen.is_empty() {
        return Err(Error::Parameter("trimming removed every utility".into()));
    }
    // loss over the same set the supremum runs over
    let loss = if chosen.len() == us.len() {
        spanning.loss
    } else {
        chosen
            .iter()
            .map(|&k| spanning.per_utility[k].full - spanning.per_utility[k].sparse)
            .fold(f64::NEG_INFINITY, f64::max)
            .max(0.0)
    };

    // prefix sums of u(κ_u returns) give every subsample mean in O(1)
    let prefix: Vec<Vec<f64>> = chosen
        .par_iter()
        .map(|&k| {
            let r = spanning.per_utility[k].kappa.returns(panel);
            let mut acc = vec![0.0; t + 1];
            for (i, y) in r.iter().enumerate() {
                acc[i + 1] = acc[i] + us[k].evaluate(*y);
            }
            acc
        })
        .collect();
    let rowmax: Vec<f64> = (0..t)
        .map(|s| (0..panel.n_assets()).map(|i| panel.value(s, i)).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let all: Vec<usize> = (0..panel.n_assets()).collect();
    let solver = ActiveSetSolver::default();
    let scale = (b as f64).sqrt();

    let statistics: Vec<f64> = (0..=t - b)
        .into_par_iter()
        .map(|s| {
            let sub = panel.rows(s, b)?;
            let kappa_mean: Vec<f64> = prefix.iter().map(|p| (p[s + b] - p[s]) / b as f64).collect();
            // u is increasing, so the row maxima bound every portfolio
            let mut order: Vec<(f64, usize)> = chosen
                .iter()
                .enumerate()
                .map(|(c, &k)| (us[k].mean(&rowmax[s..s + b]) - kappa_mean[c], c))
                .collect();
            order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut best = f64::NEG_INFINITY;
            for (bound, c) in order {
                if bound <= best {
                    break;
                }
                let k = chosen[c];
                let (sol, _) = solver
                    .solve_cold(&sub, &us[k], &all)
                    .map_err(|e| Error::Numerical(format!("subsample {s}, utility {k}: {e}")))?;
                let sol = sol
                    .into_optimal()
                    .map_err(|e| Error::Numerical(format!("subsample {s}, utility {k}: {e}")))?;
                best = best.max(sol.value - kappa_mean[c]);
            }
            Ok(scale * (best - loss))
        })
        .collect::<Result<_>>()?;

    let quantile = order_quantile(&statistics, 1.0 - config.alpha);
    let (lower, upper) = interval(loss, quantile, t);
    Ok(ConfidenceInterval {
        lower,
        upper,
        quantile,
        loss,
        alpha: config.alpha,
        subsample_length: b,
        statistics,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DominanceConfig {
    /// Thresholds; `N₁` points over the pooled range when unset.
    pub z_grid: Option<Vec<f64>>,
    /// Circular block length; `⌈T^{1/3}⌉` when unset.
    pub block_length: Option<usize>,
    pub replications: usize,
    pub seed: u64,
    /// Center bootstrap differentials at the sample differential.
    pub recenter: bool,
}

impl Default for DominanceConfig {
    fn default() -> Self {
        Self {
            z_grid: None,
            block_length: None,
            replications: 1000,
            seed: 0,
            recenter: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DominanceTestResult {
    pub statistic: f64,
    /// Threshold attaining the statistic.
    pub argmax_z: f64,
    pub p_value: f64,
    pub replications: usize,
    pub block_length: usize,
    /// True when non-dominance is rejected at 5%.
    pub reject: bool,
    pub z_grid: Vec<f64>,
    pub bootstrap: Vec<f64>,
}

fn pooled_grid(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![lo];
    }
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + i as f64 / (n - 1) as f64 * (hi - lo) })
        .collect()
}

fn differential(a: &[f64], b: &[f64], z: &[f64]) -> Vec<f64> {
    z.iter().map(|&z| lpm_series(a, z) - lpm_series(b, z)).collect()
}

/// Circular block resample of `0..t`.
pub fn circular_block_indices<R: Rng>(rng: &mut R, t: usize, block: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(t);
    while idx.len() < t {
        let s = rng.gen_range(0..t);
        for k in 0..block.min(t - idx.len()) {
            idx.push((s + k) % t);
        }
    }
    idx
}

/// Tests H₀: the candidate (`returns_b`) does not strictly dominate the
/// benchmark (`returns_a`) in the second-order sense.
pub fn nondominance_test(returns_a: &[f64], returns_b: &[f64], config: &DominanceConfig) -> Result<DominanceTestResult> {
    let t = returns_a.len();
    if t != returns_b.len() {
        return Err(Error::Validation(format!(
            "series lengths differ: {} vs {}",
            returns_a.len(),
            returns_b.len()
        )));
    }
    if t == 0 || config.replications == 0 {
        return Err(Error::Parameter("need a non-empty sample and at least one replication".into()));
    }
    let z = match &config.z_grid {
        Some(z) if z.is_empty() => return Err(Error::Parameter("empty threshold grid".into())),
        Some(z) => z.clone(),
        None => pooled_grid(returns_a, returns_b, DEFAULT_N1),
    };
    let block = config.block_length.unwrap_or_else(|| default_block_length(t));
    if block == 0 || block > t {
        return Err(Error::Parameter(format!("block length {block} outside 1..={t}")));
    }
    let d = differential(returns_a, returns_b, &z);
    let (argmax, statistic) = d
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });

    let bootstrap: Vec<f64> = (0..config.replications as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(r);
            let idx = circular_block_indices(&mut rng, t, block);
            let a: Vec<f64> = idx.iter().map(|&i| returns_a[i]).collect();
            let b: Vec<f64> = idx.iter().map(|&i| returns_b[i]).collect();
            differential(&a, &b, &z)
                .iter()
                .zip(&d)
                .map(|(s, o)| if config.recenter { s - o } else { *s })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();

    // identical distributions on the grid: non-dominance holds by definition
    let degenerate = d.iter().all(|v| *v == 0.0);
    let p_value = if degenerate {
        1.0
    } else {
        bootstrap.iter().filter(|x| **x > statistic).count() as f64 / config.replications as f64
    };
    Ok(DominanceTestResult {
        statistic,
        argmax_z: z[argmax],
        p_value,
        replications: config.replications,
        block_length: block,
        reject: p_value < 0.05,
        z_grid: z,
        bootstrap,
    })
}
