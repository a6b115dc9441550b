//! Outcome grid and the finite class of Russell–Seo utilities.
//!
//! Every utility is a convex mixture of ramps `r(y; z) = (y − z)·1(y ≤ z)`
//! anchored on an equally spaced outcome grid. The mixture weights live on
//! the lattice `{0, 1/(N₂−1), …, 1}` and sum to one. Each utility is
//! concave, non-decreasing, piecewise linear, and zero above the top of the
//! grid, which is what lets the expected-utility maximization be written as
//! a small LP.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::SupportBounds;

pub const DEFAULT_N1: usize = 10;
pub const DEFAULT_N2: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeGrid {
    points: Vec<f64>,
}

impl OutcomeGrid {
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn n1(&self) -> usize {
        self.points.len()
    }

    pub fn lower(&self) -> f64 {
        self.points[0]
    }

    pub fn upper(&self) -> f64 {
        self.points[self.points.len() - 1]
    }
}

pub fn build_grid(bounds: SupportBounds, n1: usize) -> Result<OutcomeGrid> {
    if n1 < 2 {
        return Err(Error::Parameter(format!("grid size N1 must be >= 2, got {n1}")));
    }
    if !(bounds.lower < bounds.upper) {
        return Err(Error::DegenerateSupport(bounds.lower));
    }
    let span = bounds.upper - bounds.lower;
    let mut points: Vec<f64> = (0..n1)
        .map(|k| bounds.lower + k as f64 / (n1 - 1) as f64 * span)
        .collect();
    // exact endpoints
    points[0] = bounds.lower;
    points[n1 - 1] = bounds.upper;
    Ok(OutcomeGrid { points })
}

/// A piecewise-linear concave utility `u(y) = Σ_n v_n (y − z_n) 1(y ≤ z_n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RussellSeoUtility {
    points: Vec<f64>,
    /// Lattice numerators of `v` over `denominator` when built by enumeration.
    numerators: Option<Vec<u32>>,
    denominator: u32,
    weights: Vec<f64>,
    /// `c₁,n` for n = 1..=N₁+1 (last entry is 0).
    slopes: Vec<f64>,
    /// `c₀,n` for n = 1..=N₁.
    intercepts: Vec<f64>,
    /// Zero-based indices of 𝒩 = {n : v_n > 0} ∪ {N₁}.
    active: Vec<usize>,
    /// Grid points carrying positive weight, ascending.
    kinks: Vec<f64>,
    /// Weight at each kink (the drop in slope when crossing it upward).
    jumps: Vec<f64>,
    /// Slope on each of the `kinks.len() + 1` segments, left to right.
    segment_slopes: Vec<f64>,
}

impl RussellSeoUtility {
    /// Utility with arbitrary nonnegative weights summing to one.
    pub fn from_weights(grid: &OutcomeGrid, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.n1() {
            return Err(Error::Parameter(format!(
                "{} weights for a grid of {} points",
                weights.len(),
                grid.n1()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Parameter("utility weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!(
                "utility weights must sum to one, got {total}"
            )));
        }
        Ok(Self::build(grid.points.clone(), None, 0, weights))
    }

    fn from_numerators(grid: &OutcomeGrid, numerators: Vec<u32>, denominator: u32) -> Self {
        let weights = numerators
            .iter()
            .map(|&k| k as f64 / denominator as f64)
            .collect();
        Self::build(grid.points.clone(), Some(numerators), denominator, weights)
    }

    /// Equal-mixture utility, `v_n = 1/N₁` for every grid point.
    pub fn equal_mixture(grid: &OutcomeGrid) -> Self {
        let n1 = grid.n1();
        Self::build(grid.points.clone(), None, 0, vec![1.0 / n1 as f64; n1])
    }

    fn build(points: Vec<f64>, numerators: Option<Vec<u32>>, denominator: u32, weights: Vec<f64>) -> Self {
        let n1 = points.len();
        let mut slopes = vec![0.0; n1 + 1];
        for n in (0..n1).rev() {
            slopes[n] = slopes[n + 1] + weights[n];
        }
        let mut intercepts = vec![0.0; n1];
        let mut acc = 0.0;
        for n in (0..n1).rev() {
            acc += (slopes[n + 1] - slopes[n]) * points[n];
            intercepts[n] = acc;
        }
        let mut active: Vec<usize> = (0..n1).filter(|&n| weights[n] > 0.0).collect();
        if active.last() != Some(&(n1 - 1)) {
            active.push(n1 - 1);
        }
        let mut kinks = Vec::new();
        let mut jumps = Vec::new();
        for n in 0..n1 {
            if weights[n] > 0.0 {
                kinks.push(points[n]);
                jumps.push(weights[n]);
            }
        }
        let mut segment_slopes = Vec::with_capacity(kinks.len() + 1);
        let mut s: f64 = jumps.iter().sum();
        segment_slopes.push(s);
        for (k, j) in jumps.iter().enumerate() {
            s = if k + 1 == jumps.len() { 0.0 } else { s - j };
            segment_slopes.push(s);
        }
        Self {
            points,
            numerators,
            denominator,
            weights,
            slopes,
            intercepts,
            active,
            kinks,
            jumps,
            segment_slopes,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn numerators(&self) -> Option<&[u32]> {
        self.numerators.as_deref()
    }

    pub fn denominator(&self) -> u32 {
        self.denominator
    }

    pub fn grid_points(&self) -> &[f64] {
        &self.points
    }

    /// `c₁,n`, n = 1..=N₁+1.
    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    /// `c₀,n`, n = 1..=N₁.
    pub fn intercepts(&self) -> &[f64] {
        &self.intercepts
    }

    /// Zero-based members of 𝒩.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    /// `(slope, intercept)` of the LP line for every member of 𝒩.
    pub fn lines(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.active.iter().map(|&n| (self.slopes[n], self.intercepts[n]))
    }

    pub fn kinks(&self) -> &[f64] {
        &self.kinks
    }

    pub fn jumps(&self) -> &[f64] {
        &self.jumps
    }

    pub fn segment_slopes(&self) -> &[f64] {
        &self.segment_slopes
    }

    /// Segment containing `y`: the number of kinks strictly below `y`.
    pub fn segment_of(&self, y: f64) -> usize {
        self.kinks.partition_point(|&b| b < y)
    }

    /// True when the utility is constant (no LP needed).
    pub fn is_constant(&self) -> bool {
        self.segment_slopes.iter().all(|s| *s == 0.0)
    }

    pub fn top(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn evaluate(&self, y: f64) -> f64 {
        let mut u = 0.0;
        for (b, v) in self.kinks.iter().zip(&self.jumps) {
            if y <= *b {
                u += v * (y - b);
            }
        }
        u
    }

    /// Minimum over the LP lines `c₁,n·y + c₀,n`, n ∈ 𝒩.
    pub fn evaluate_lines(&self, y: f64) -> f64 {
        self.lines()
            .map(|(c1, c0)| c1 * y + c0)
            .fold(f64::INFINITY, f64::min)
    }

    /// Sample mean of `u` over a return series.
    pub fn mean(&self, returns: &[f64]) -> f64 {
        if returns.is_empty() {
            return 0.0;
        }
        returns.iter().map(|&y| self.evaluate(y)).sum::<f64>() / returns.len() as f64
    }

    /// True when the utility is a single ramp at grid point `n` (an LPM threshold).
    pub fn ramp_index(&self) -> Option<usize> {
        let nz: Vec<usize> = (0..self.weights.len()).filter(|&n| self.weights[n] > 0.0).collect();
        (nz.len() == 1).then(|| nz[0])
    }
}

pub fn evaluate_utility(u: &RussellSeoUtility, y: f64) -> f64 {
    u.evaluate(y)
}

/// Closed-form size of the utility class, `∏_{i=1}^{N₁−1}(N₂+i−1)/(N₁−1)!`.
pub fn utility_count(n1: usize, n2: usize) -> u128 {
    // binomial(N₁+N₂−2, N₁−1), built up so every intermediate division is exact
    let mut c: u128 = 1;
    for i in 1..n1 as u128 {
        c = c * (n2 as u128 + i - 1) / i;
    }
    c
}

/// All lattice weight vectors summing to one, in ascending lexicographic
/// order of their numerators.
pub fn enumerate_utilities(grid: &OutcomeGrid, n2: usize) -> Result<Vec<RussellSeoUtility>> {
    if n2 < 2 {
        return Err(Error::Parameter(format!("N2 must be >= 2, got {n2}")));
    }
    let n1 = grid.n1();
    let total = (n2 - 1) as u32;
    let mut out = Vec::with_capacity(utility_count(n1, n2).min(1 << 20) as usize);
    let mut current = vec![0u32; n1];
    compositions(&mut current, 0, total, &mut |num| {
        out.push(RussellSeoUtility::from_numerators(grid, num.to_vec(), total));
    });
    Ok(out)
}

fn compositions(current: &mut [u32], pos: usize, remaining: u32, emit: &mut dyn FnMut(&[u32])) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        emit(current);
        return;
    }
    for k in 0..=remaining {
        current[pos] = k;
        compositions(current, pos + 1, remaining - k, emit);
    }
    current[pos] = 0;
}
