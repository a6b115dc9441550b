//! Expected-utility maximization over (support-restricted) portfolio simplices.
//!
//! For a Russell–Seo utility `u` the problem `sup_λ (1/T) Σ_t u(X_t'λ)` is the LP
//!
//! ```text
//! max (1/T) Σ_t y_t
//! s.t. y_t − c₁,n · X_t'λ ≤ c₀,n      t = 1..T, n ∈ 𝒩
//!      Σ_{i∈S} λ_i = 1,  λ ≥ 0,  y free
//! ```
//!
//! Two solvers implement [`UtilitySolver`]:
//!
//! * [`ActiveSetSolver`] keeps each `y_t` implicitly on its active line and
//!   pivots in the `|S|`-dimensional weight space. This is the production
//!   engine; it supports warm starts when an asset is appended to the support.
//! * [`DenseSimplexSolver`] builds the LP above verbatim and runs a two-phase
//!   tableau simplex with Bland's rule. It is slow and exists as an
//!   independent check and for exporting instances.

mod active;
mod dense;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::ReturnPanel;
use crate::utility::RussellSeoUtility;

pub use active::{ActiveSetSolver, WarmState};
pub use dense::{DenseLp, DenseSimplexSolver, RowSense, UtilityLpInstance};

/// Constraint tolerance for simplex weights.
pub const WEIGHT_TOL: f64 = 1e-8;

/// Nonnegative weights on a subset of panel assets summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexPortfolio {
    pub assets: Vec<usize>,
    pub weights: Vec<f64>,
}

impl SimplexPortfolio {
    pub fn new(assets: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        let p = Self { assets, weights };
        p.validate(WEIGHT_TOL)?;
        Ok(p)
    }

    pub fn single(asset: usize) -> Self {
        Self {
            assets: vec![asset],
            weights: vec![1.0],
        }
    }

    pub fn uniform(assets: Vec<usize>) -> Self {
        let w = 1.0 / assets.len() as f64;
        let weights = vec![w; assets.len()];
        Self { assets, weights }
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.assets.len() != self.weights.len() || self.assets.is_empty() {
            return Err(Error::Validation(
                "portfolio needs one weight per asset and at least one asset".into(),
            ));
        }
        if let Some(w) = self.weights.iter().find(|w| !(**w >= -tol)) {
            return Err(Error::Validation(format!("negative portfolio weight {w}")));
        }
        let s: f64 = self.weights.iter().sum();
        if (s - 1.0).abs() > tol {
            return Err(Error::Validation(format!("portfolio weights sum to {s}")));
        }
        Ok(())
    }

    /// Assets carrying strictly positive weight.
    pub fn support(&self) -> Vec<usize> {
        self.assets
            .iter()
            .zip(&self.weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|(a, _)| *a)
            .collect()
    }

    pub fn dense(&self, p: usize) -> Vec<f64> {
        let mut out = vec![0.0; p];
        for (&a, &w) in self.assets.iter().zip(&self.weights) {
            out[a] += w;
        }
        out
    }

    pub fn returns(&self, panel: &ReturnPanel) -> Vec<f64> {
        panel.portfolio_returns(&self.assets, &self.weights)
    }

    pub fn named(&self, panel: &ReturnPanel) -> Vec<(String, f64)> {
        self.assets
            .iter()
            .zip(&self.weights)
            .map(|(&a, &w)| (panel.assets()[a].clone(), w))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Optimal expected utility `(1/T) Σ u(X_t'λ)`, re-evaluated at `weights`.
    pub value: f64,
    pub weights: SimplexPortfolio,
    pub pivots: usize,
    pub diagnostics: Option<String>,
}

impl LpSolution {
    /// The solution if optimal, otherwise a numerical error carrying the diagnostics.
    pub fn into_optimal(self) -> Result<Self> {
        match self.status {
            LpStatus::Optimal => Ok(self),
            s => Err(Error::Numerical(format!(
                "LP ended with status {s:?}: {}",
                self.diagnostics.as_deref().unwrap_or("no diagnostics")
            ))),
        }
    }
}

pub trait UtilitySolver: Sync {
    fn solve(&self, panel: &ReturnPanel, u: &RussellSeoUtility, support: &[usize]) -> Result<LpSolution>;
}

pub(crate) fn check_support(panel: &ReturnPanel, support: &[usize]) -> Result<()> {
    if support.is_empty() {
        return Err(Error::Validation("asset support must be non-empty".into()));
    }
    let mut seen = vec![false; panel.n_assets()];
    for &i in support {
        if i >= panel.n_assets() {
            return Err(Error::Validation(format!("asset index {i} out of range")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::Validation(format!("asset index {i} repeated in support")));
        }
    }
    panel.require_observed()
}

/// True when some return on the support exceeds the top of the utility grid,
/// in which case the LP needs the extra rows `y_t ≤ 0`.
pub(crate) fn needs_cap(panel: &ReturnPanel, u: &RussellSeoUtility, support: &[usize]) -> bool {
    let top = u.top();
    u.weights().last().copied().unwrap_or(0.0) > 0.0
        && support
            .iter()
            .any(|&i| panel.column(i).iter().any(|&x| x > top))
}

/// `sup` over the support simplex of the empirical expected utility.
pub fn max_expected_utility(
    panel: &ReturnPanel,
    u: &RussellSeoUtility,
    support: &[usize],
) -> Result<LpSolution> {
    ActiveSetSolver::default().solve(panel, u, support)
}

/// Lower partial moment of a return series at threshold `z`.
pub fn lpm_series(returns: &[f64], z: f64) -> f64 {
    if returns.is_empty() {
        return 0.0;
    }
    returns.iter().map(|&r| (z - r).max(0.0)).sum::<f64>() / returns.len() as f64
}

/// `(1/T) Σ_t (z − X_t'λ)_+`.
pub fn lpm(panel: &ReturnPanel, weights: &SimplexPortfolio, z: f64) -> f64 {
    lpm_series(&weights.returns(panel), z)
}

/// Lower partial moment differential `D(z, κ, λ) = LPM(κ, z) − LPM(λ, z)`.
pub fn lpmd(panel: &ReturnPanel, kappa: &SimplexPortfolio, lambda: &SimplexPortfolio, z: f64) -> f64 {
    lpm(panel, kappa, z) - lpm(panel, lambda, z)
}
