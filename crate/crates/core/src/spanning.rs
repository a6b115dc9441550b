//! Forward stepwise selection of sparse spanning supports.
//!
//! The diversification loss of a support `S` is
//! `max_u (J_u − K_u(S))`, where `J_u` is the best expected utility over the
//! whole universe and `K_u(S)` the best over portfolios supported on `S`.
//! The greedy engine grows `S` one asset at a time, always adding the asset
//! whose inclusion gives the smallest loss.
//!
//! Candidate evaluation is exact but pruned. `K_u` can only grow when `S`
//! grows, so the previous gap `J_u − K_u(S)` bounds the new gap from above.
//! Visiting utilities in descending order of previous gap, a candidate's loss
//! is settled as soon as the next bound falls to the running maximum, and the
//! candidate is abandoned once the running maximum exceeds the best loss seen.

use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{ActiveSetSolver, LpSolution, SimplexPortfolio, UtilitySolver, WarmState};
use crate::panel::{support_bounds, ReturnPanel};
use crate::utility::{build_grid, enumerate_utilities, OutcomeGrid, RussellSeoUtility, DEFAULT_N1, DEFAULT_N2};

pub const DEFAULT_LOSS_TOLERANCE: f64 = 1e-6;

/// Negative losses down to this magnitude are LP round-off and read as zero.
const NEGATIVE_SLACK: f64 = 1e-9;

/// Positive losses up to this magnitude come from re-evaluating equal optima
/// through different bases and read as zero.
const POSITIVE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// Stop once the support reaches `q_max` assets.
    #[default]
    Empirical,
    /// Run up to `iteration_cap` additions; the support may exceed `q_max`.
    Theory,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpanningConfig {
    pub q_max: usize,
    /// Defaults to `⌈q_max · ln(T + 1)⌉` when unset.
    pub iteration_cap: Option<usize>,
    pub loss_tolerance: f64,
    pub n1: usize,
    pub n2: usize,
    pub mode: SelectionMode,
}

impl SpanningConfig {
    pub fn new(q_max: usize) -> Self {
        Self {
            q_max,
            iteration_cap: None,
            loss_tolerance: DEFAULT_LOSS_TOLERANCE,
            n1: DEFAULT_N1,
            n2: DEFAULT_N2,
            mode: SelectionMode::Empirical,
        }
    }

    pub fn iteration_cap_for(&self, t: usize) -> usize {
        self.iteration_cap
            .unwrap_or_else(|| (self.q_max as f64 * ((t + 1) as f64).ln()).ceil() as usize)
    }

    pub fn validate(&self, t: usize) -> Result<()> {
        if self.q_max == 0 {
            return Err(Error::Parameter("q_max must be at least 1".into()));
        }
        if self.iteration_cap_for(t) < self.q_max {
            return Err(Error::Parameter(format!(
                "iteration cap {} is below q_max {}",
                self.iteration_cap_for(t),
                self.q_max
            )));
        }
        if !(self.loss_tolerance >= 0.0) {
            return Err(Error::Parameter("loss tolerance must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    LossTolerance,
    SupportCap,
    IterationCap,
    UniverseExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub asset: usize,
    pub name: String,
    pub loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UtilityOptima {
    /// Full-universe optimum `J_u`.
    pub full: f64,
    /// Optimum on the selected support `K_u`.
    pub sparse: f64,
    /// Maximizer of `K_u`, the sparse optimizer `κ_u`.
    pub kappa: SimplexPortfolio,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpanningResult {
    pub support: Vec<usize>,
    pub names: Vec<String>,
    pub loss: f64,
    pub per_utility: Vec<UtilityOptima>,
    pub trace: Vec<TraceStep>,
    /// Utility attaining the loss.
    pub argmax_utility: usize,
    pub stop_reason: StopReason,
    pub mode: SelectionMode,
    pub iteration_cap: usize,
    pub q_max: usize,
    pub n1: usize,
    pub n2: usize,
    pub loss_tolerance: f64,
}

impl SpanningResult {
    /// Sparse optimizer of the utility attaining the loss.
    pub fn argmax_portfolio(&self) -> &SimplexPortfolio {
        &self.per_utility[self.argmax_utility].kappa
    }

    pub fn kappa_map(&self) -> Vec<SimplexPortfolio> {
        self.per_utility.iter().map(|o| o.kappa.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurvePoint {
    pub q: usize,
    pub support: Vec<String>,
    pub loss: f64,
    pub ci: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub points: Vec<LossCurvePoint>,
}

impl LossCurve {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["q", "loss", "ci_lower", "ci_upper", "support"])?;
        for p in &self.points {
            let (lo, hi) = p.ci.map_or((String::new(), String::new()), |c| (c[0].to_string(), c[1].to_string()));
            out.write_record([p.q.to_string(), p.loss.to_string(), lo, hi, p.support.join(";")])?;
        }
        out.flush().map_err(|e| Error::io("csv output", e))?;
        Ok(())
    }
}

fn clamp_loss(x: f64) -> f64 {
    if (-NEGATIVE_SLACK..=POSITIVE_SLACK).contains(&x) {
        0.0
    } else {
        x
    }
}

fn lp_error(u: usize, e: Error) -> Error {
    match e {
        Error::Numerical(m) => Error::Numerical(format!("utility {u}: {m}")),
        other => other,
    }
}

fn optimal(u: usize, sol: LpSolution) -> Result<LpSolution> {
    sol.into_optimal().map_err(|e| lp_error(u, e))
}

/// `J_u` for every utility.
pub fn full_universe_optima(panel: &ReturnPanel, utilities: &[RussellSeoUtility]) -> Result<Vec<f64>> {
    panel.require_observed()?;
    if panel.n_assets() == 0 {
        return Err(Error::EmptyUniverse(None));
    }
    let all: Vec<usize> = (0..panel.n_assets()).collect();
    let solver = ActiveSetSolver::default();
    utilities
        .par_iter()
        .enumerate()
        .map(|(k, u)| Ok(optimal(k, solver.solve(panel, u, &all).map_err(|e| lp_error(k, e))?)?.value))
        .collect()
}

/// `max_u (J_u − K_u(support))`.
pub fn loss_of_support(
    panel: &ReturnPanel,
    utilities: &[RussellSeoUtility],
    full_optima: &[f64],
    support: &[usize],
) -> Result<f64> {
    if utilities.len() != full_optima.len() {
        return Err(Error::Validation("one full-universe optimum per utility required".into()));
    }
    let solver = ActiveSetSolver::default();
    let gaps: Vec<f64> = utilities
        .par_iter()
        .zip(full_optima)
        .enumerate()
        .map(|(k, (u, j))| Ok(j - optimal(k, solver.solve(panel, u, support).map_err(|e| lp_error(k, e))?)?.value))
        .collect::<Result<_>>()?;
    Ok(clamp_loss(gaps.into_iter().fold(f64::NEG_INFINITY, f64::max)))
}

/// Panel, utility class and full-universe optima shared by every selection.
pub struct SpanningEngine<'a> {
    panel: &'a ReturnPanel,
    grid: OutcomeGrid,
    utilities: Vec<RussellSeoUtility>,
    full: Vec<f64>,
    solver: ActiveSetSolver,
}

struct UtilityState {
    k: f64,
    kappa: SimplexPortfolio,
    warm: WarmState,
}

impl<'a> SpanningEngine<'a> {
    pub fn new(panel: &'a ReturnPanel, n1: usize, n2: usize) -> Result<Self> {
        panel.require_observed()?;
        if panel.n_assets() == 0 {
            return Err(Error::EmptyUniverse(None));
        }
        let grid = build_grid(support_bounds(panel)?, n1)?;
        let utilities = enumerate_utilities(&grid, n2)?;
        let full = full_universe_optima(panel, &utilities)?;
        Ok(Self {
            panel,
            grid,
            utilities,
            full,
            solver: ActiveSetSolver::default(),
        })
    }

    pub fn panel(&self) -> &ReturnPanel {
        self.panel
    }

    pub fn grid(&self) -> &OutcomeGrid {
        &self.grid
    }

    pub fn utilities(&self) -> &[RussellSeoUtility] {
        &self.utilities
    }

    pub fn full_optima(&self) -> &[f64] {
        &self.full
    }

    pub fn loss_of_support(&self, support: &[usize]) -> Result<f64> {
        loss_of_support(self.panel, &self.utilities, &self.full, support)
    }

    fn extend(&self, k: usize, st: &UtilityState, j: usize) -> Result<UtilityState> {
        let u = &self.utilities[k];
        let (sol, warm) = self
            .solver
            .solve_extended(self.panel, u, &st.warm, j)
            .map_err(|e| lp_error(k, e))?;
        let sol = optimal(k, sol)?;
        if sol.value >= st.k {
            Ok(UtilityState {
                k: sol.value,
                kappa: sol.weights,
                warm,
            })
        } else {
            let mut kappa = st.kappa.clone();
            kappa.assets.push(j);
            kappa.weights.push(0.0);
            Ok(UtilityState { k: st.k, kappa, warm })
        }
    }

    /// Exact loss of `S ∪ {j}`, or `None` once it provably exceeds `bound`.
    fn candidate_loss(
        &self,
        states: &[UtilityState],
        order: &[usize],
        gaps: &[f64],
        j: usize,
        start: f64,
        bound: &Mutex<f64>,
    ) -> Result<Option<f64>> {
        let mut partial = start;
        for &k in &order[1..] {
            if gaps[k] <= partial {
                break;
            }
            if partial > *bound.lock().unwrap() {
                return Ok(None);
            }
            let next = self.extend(k, &states[k], j)?;
            partial = partial.max(self.full[k] - next.k);
        }
        Ok(Some(partial))
    }

    pub fn fss_select(&self, config: &SpanningConfig) -> Result<SpanningResult> {
        let t = self.panel.n_periods();
        config.validate(t)?;
        let p = self.panel.n_assets();
        let n_u = self.utilities.len();
        let cap = config.iteration_cap_for(t);
        let size_limit = match config.mode {
            SelectionMode::Empirical => config.q_max,
            SelectionMode::Theory => p,
        };

        // first addition: single-asset supports need no LP
        let singles: Vec<Vec<f64>> = (0..p)
            .into_par_iter()
            .map(|j| self.utilities.iter().map(|u| u.mean(self.panel.column(j))).collect())
            .collect();
        let mut first = (f64::INFINITY, 0usize);
        for (j, ks) in singles.iter().enumerate() {
            let loss = self.full.iter().zip(ks).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max);
            if loss < first.0 {
                first = (loss, j);
            }
        }
        let j0 = first.1;
        let mut states: Vec<UtilityState> = (0..n_u)
            .into_par_iter()
            .map(|k| {
                let (sol, warm) = self
                    .solver
                    .solve_cold(self.panel, &self.utilities[k], &[j0])
                    .map_err(|e| lp_error(k, e))?;
                Ok(UtilityState {
                    k: singles[j0][k],
                    kappa: optimal(k, sol)?.weights,
                    warm,
                })
            })
            .collect::<Result<_>>()?;
        let mut support = vec![j0];
        let mut in_support = vec![false; p];
        in_support[j0] = true;
        let mut loss = clamp_loss(first.0);
        let mut trace = vec![TraceStep {
            asset: j0,
            name: self.panel.assets()[j0].clone(),
            loss,
        }];

        let stop_reason = loop {
            if loss <= config.loss_tolerance {
                break StopReason::LossTolerance;
            }
            if support.len() >= size_limit {
                break StopReason::SupportCap;
            }
            if trace.len() >= cap {
                break StopReason::IterationCap;
            }
            if support.len() == p {
                break StopReason::UniverseExhausted;
            }

            let gaps: Vec<f64> = (0..n_u).map(|k| self.full[k] - states[k].k).collect();
            let mut order: Vec<usize> = (0..n_u).collect();
            order.sort_by(|&a, &b| gaps[b].total_cmp(&gaps[a]).then(a.cmp(&b)));
            let top = order[0];
            let candidates: Vec<usize> = (0..p).filter(|&j| !in_support[j]).collect();

            // lower bound from the currently binding utility
            let mut bounds: Vec<(f64, usize)> = candidates
                .par_iter()
                .map(|&j| {
                    let next = self.extend(top, &states[top], j)?;
                    Ok((self.full[top] - next.k, j))
                })
                .collect::<Result<_>>()?;
            bounds.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

            let best = Mutex::new(f64::INFINITY);
            let evaluated: Vec<Option<f64>> = bounds
                .par_iter()
                .map(|&(lb, j)| {
                    if lb > *best.lock().unwrap() {
                        return Ok(None);
                    }
                    let r = self.candidate_loss(&states, &order, &gaps, j, lb, &best)?;
                    if let Some(l) = r {
                        let mut b = best.lock().unwrap();
                        if l < *b {
                            *b = l;
                        }
                    }
                    Ok(r)
                })
                .collect::<Result<_>>()?;
            let (mut best_loss, mut best_j) = (f64::INFINITY, usize::MAX);
            for (&(_, j), l) in bounds.iter().zip(&evaluated) {
                if let Some(l) = *l {
                    if l < best_loss || (l == best_loss && j < best_j) {
                        best_loss = l;
                        best_j = j;
                    }
                }
            }
            if best_j == usize::MAX {
                return Err(Error::Numerical("no candidate produced a finite loss".into()));
            }

            states = states
                .par_iter()
                .enumerate()
                .map(|(k, st)| self.extend(k, st, best_j))
                .collect::<Result<_>>()?;
            support.push(best_j);
            in_support[best_j] = true;
            let exact = (0..n_u)
                .map(|k| self.full[k] - states[k].k)
                .fold(f64::NEG_INFINITY, f64::max);
            loss = clamp_loss(exact).min(loss);
            trace.push(TraceStep {
                asset: best_j,
                name: self.panel.assets()[best_j].clone(),
                loss,
            });
        };

        let (argmax_utility, _) = (0..n_u)
            .map(|k| (k, self.full[k] - states[k].k))
            .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        let per_utility = states
            .into_iter()
            .zip(&self.full)
            .map(|(st, &full)| UtilityOptima {
                full,
                sparse: st.k,
                kappa: st.kappa,
            })
            .collect();
        Ok(SpanningResult {
            names: support.iter().map(|&i| self.panel.assets()[i].clone()).collect(),
            support,
            loss,
            per_utility,
            trace,
            argmax_utility,
            stop_reason,
            mode: config.mode,
            iteration_cap: cap,
            q_max: config.q_max,
            n1: config.n1,
            n2: config.n2,
            loss_tolerance: config.loss_tolerance,
        })
    }

    /// Greedy path up to `max(q_values)`, read off at each requested size.
    pub fn loss_curve(&self, q_values: &[usize], template: &SpanningConfig) -> Result<LossCurve> {
        if q_values.is_empty() || q_values.windows(2).any(|w| w[0] >= w[1]) || q_values[0] == 0 {
            return Err(Error::Parameter("q values must be non-empty, positive and ascending".into()));
        }
        let mut cfg = template.clone();
        cfg.q_max = *q_values.last().unwrap();
        cfg.mode = SelectionMode::Empirical;
        cfg.iteration_cap = Some(cfg.iteration_cap_for(self.panel.n_periods()).max(cfg.q_max));
        let res = self.fss_select(&cfg)?;
        let points = q_values
            .iter()
            .map(|&q| {
                let n = q.min(res.trace.len());
                LossCurvePoint {
                    q,
                    support: res.trace[..n].iter().map(|s| s.name.clone()).collect(),
                    loss: res.trace[n - 1].loss,
                    ci: None,
                }
            })
            .collect();
        Ok(LossCurve { points })
    }

    /// Smallest loss over all supports of exactly `q` assets, with one minimizer.
    pub fn exhaustive_optimum(&self, q: usize) -> Result<(f64, Vec<usize>)> {
        let p = self.panel.n_assets();
        if q == 0 || q > p {
            return Err(Error::Parameter(format!("support size {q} outside 1..={p}")));
        }
        let mut best = (f64::INFINITY, Vec::new());
        let mut idx: Vec<usize> = (0..q).collect();
        loop {
            let l = self.loss_of_support(&idx)?;
            if l < best.0 {
                best = (l, idx.clone());
            }
            // next combination in lexicographic order
            let mut i = q;
            while i > 0 && idx[i - 1] == p - q + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for k in i..q {
                idx[k] = idx[k - 1] + 1;
            }
        }
        Ok(best)
    }
}

/// Runs the greedy selection with a fresh engine.
pub fn fss_select(panel: &ReturnPanel, config: &SpanningConfig) -> Result<SpanningResult> {
    SpanningEngine::new(panel, config.n1, config.n2)?.fss_select(config)
}

pub fn loss_curve(panel: &ReturnPanel, q_values: &[usize], template: &SpanningConfig) -> Result<LossCurve> {
    SpanningEngine::new(panel, template.n1, template.n2)?.loss_curve(q_values, template)
}

/// Greedy loss against the exhaustive optimum at the same support size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuaranteeDiagnostics {
    pub q: usize,
    pub greedy_loss: f64,
    pub exhaustive_loss: f64,
    pub exhaustive_support: Vec<usize>,
    /// `greedy / exhaustive`, `None` when the exhaustive loss is zero.
    pub ratio: Option<f64>,
}

pub fn guarantee_diagnostics(panel: &ReturnPanel, config: &SpanningConfig) -> Result<GuaranteeDiagnostics> {
    let engine = SpanningEngine::new(panel, config.n1, config.n2)?;
    let greedy = engine.fss_select(config)?;
    let (ex, ex_support) = engine.exhaustive_optimum(config.q_max.min(panel.n_assets()))?;
    Ok(GuaranteeDiagnostics {
        q: config.q_max,
        greedy_loss: greedy.loss,
        exhaustive_loss: ex,
        exhaustive_support: ex_support,
        ratio: (ex > 0.0).then(|| greedy.loss / ex),
    })
}
