//! Primal simplex in weight space for piecewise-linear concave objectives.
//!
//! The LP `max (1/T)Σ y_t, y_t ≤ c₁,n X_t'λ + c₀,n, λ ∈ Δ_S` has one free
//! variable per observation. At any basic solution each `y_t` sits on one
//! "key" line of the utility, so the objective is locally linear in `λ`, and
//! a vertex is pinned down by `|S|` equations in `λ`: the budget row plus
//! `|S| − 1` tight constraints, each either a facet `λ_i = 0` or a kink
//! `X_t'λ = b_k` (observation `t` at ramp breakpoint `b_k`, two lines tight).
//!
//! The working basis is the `|S| × |S|` matrix of those rows. Its inverse
//! columns are the edge directions. Pivots use a long-step ratio test: while
//! moving along an edge, observations whose portfolio return crosses a
//! breakpoint switch key line and lower the directional derivative; the step
//! ends at the first crossing where the derivative stops being positive or
//! when a weight reaches zero. Termination with no improving edge is the
//! usual simplex optimality certificate for the full LP.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;

use super::{check_support, LpSolution, LpStatus, SimplexPortfolio, UtilitySolver};
use crate::error::Result;
use crate::panel::ReturnPanel;
use crate::utility::RussellSeoUtility;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tight {
    Facet(usize),
    Kink { t: usize, k: usize },
}

/// Optimal basis of one solve, reusable as the starting point after an
/// asset is appended to the support.
#[derive(Debug, Clone)]
pub struct WarmState {
    support: Vec<usize>,
    tight: Vec<Tight>,
    /// Row-major inverse of the working basis.
    minv: Vec<f64>,
    keys: Vec<u16>,
    lambda: Vec<f64>,
}

impl WarmState {
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.lambda
    }
}

#[derive(Debug, Clone)]
pub struct ActiveSetSolver {
    /// Reduced costs at or below this value count as non-improving.
    pub optimality_tol: f64,
    /// Smallest usable edge rate in the ratio test.
    pub pivot_tol: f64,
    /// Pivots between refactorizations of the working basis.
    pub refactor_every: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub degenerate_limit: usize,
}

impl Default for ActiveSetSolver {
    fn default() -> Self {
        Self {
            optimality_tol: 1e-11,
            pivot_tol: 1e-9,
            refactor_every: 64,
            degenerate_limit: 50,
        }
    }
}

impl UtilitySolver for ActiveSetSolver {
    fn solve(&self, panel: &ReturnPanel, u: &RussellSeoUtility, support: &[usize]) -> Result<LpSolution> {
        self.solve_cold(panel, u, support).map(|(s, _)| s)
    }
}

#[derive(Debug, Clone, Copy)]
struct Event {
    s: f64,
    t: usize,
    k: usize,
    drop: f64,
    new_seg: u16,
}

impl PartialEq for Event {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Event {
    // reversed: BinaryHeap pops the smallest step first
    fn cmp(&self, o: &Self) -> Ordering {
        o.s.total_cmp(&self.s)
            .then_with(|| o.t.cmp(&self.t))
            .then_with(|| o.k.cmp(&self.k))
    }
}

struct Problem<'a> {
    cols: Vec<&'a [f64]>,
    t_len: usize,
    kinks: &'a [f64],
    jumps: &'a [f64],
    slopes: &'a [f64],
}

impl Problem<'_> {
    fn returns(&self, lambda: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.t_len, 0.0);
        for (c, &w) in self.cols.iter().zip(lambda) {
            if w != 0.0 {
                for (o, x) in out.iter_mut().zip(c.iter()) {
                    *o += w * x;
                }
            }
        }
    }

    fn h_row(&self, tight: Tight, m: usize) -> Vec<f64> {
        match tight {
            Tight::Facet(i) => {
                let mut h = vec![0.0; m];
                h[i] = 1.0;
                h
            }
            Tight::Kink { t, .. } => self.cols.iter().map(|c| c[t]).collect(),
        }
    }

    fn rhs(&self, tight: Tight) -> f64 {
        match tight {
            Tight::Facet(_) => 0.0,
            Tight::Kink { k, .. } => self.kinks[k],
        }
    }
}

impl ActiveSetSolver {
    /// Solves from the best single-asset vertex.
    pub fn solve_cold(
        &self,
        panel: &ReturnPanel,
        u: &RussellSeoUtility,
        support: &[usize],
    ) -> Result<(LpSolution, WarmState)> {
        check_support(panel, support)?;
        let m = support.len();
        let best = support
            .iter()
            .enumerate()
            .map(|(l, &i)| (l, u.mean(panel.column(i))))
            .fold((0usize, f64::NEG_INFINITY), |acc, (l, v)| if v > acc.1 { (l, v) } else { acc });
        let i0 = best.0;
        let tight: Vec<Tight> = (0..m).filter(|&i| i != i0).map(Tight::Facet).collect();
        // closed-form inverse of [1ᵀ; e_i (i ≠ i0)]
        let mut minv = vec![0.0; m * m];
        minv[i0 * m] = 1.0;
        for (r, tt) in tight.iter().enumerate() {
            if let Tight::Facet(i) = *tt {
                minv[i * m + r + 1] = 1.0;
                minv[i0 * m + r + 1] = -1.0;
            }
        }
        let mut lambda = vec![0.0; m];
        lambda[i0] = 1.0;
        let col = panel.column(support[i0]);
        let keys = col
            .iter()
            .map(|&y| u.kinks().partition_point(|&b| b < y) as u16)
            .collect();
        let state = WarmState {
            support: support.to_vec(),
            tight,
            minv,
            keys,
            lambda,
        };
        self.run(panel, u, state)
    }

    /// Solves on `state`'s support extended by `asset`, starting from the
    /// previous optimum (which stays feasible with zero weight on `asset`).
    pub fn solve_extended(
        &self,
        panel: &ReturnPanel,
        u: &RussellSeoUtility,
        state: &WarmState,
        asset: usize,
    ) -> Result<(LpSolution, WarmState)> {
        let mut support = state.support.clone();
        support.push(asset);
        check_support(panel, &support)?;
        let m = state.support.len();
        let n = m + 1;
        let col = panel.column(asset);
        // c = new column of the working basis
        let mut c = vec![0.0; m];
        c[0] = 1.0;
        for (r, tt) in state.tight.iter().enumerate() {
            if let Tight::Kink { t, .. } = *tt {
                c[r + 1] = col[t];
            }
        }
        let mut minv = vec![0.0; n * n];
        for i in 0..m {
            let mut acc = 0.0;
            for r in 0..m {
                let v = state.minv[i * m + r];
                minv[i * n + r] = v;
                acc += v * c[r];
            }
            minv[i * n + m] = -acc;
        }
        minv[m * n + m] = 1.0;
        let mut tight = state.tight.clone();
        tight.push(Tight::Facet(m));
        let mut lambda = state.lambda.clone();
        lambda.push(0.0);
        let next = WarmState {
            support,
            tight,
            minv,
            keys: state.keys.clone(),
            lambda,
        };
        self.run(panel, u, next)
    }

    fn run(
        &self,
        panel: &ReturnPanel,
        u: &RussellSeoUtility,
        mut st: WarmState,
    ) -> Result<(LpSolution, WarmState)> {
        let m = st.support.len();
        let prob = Problem {
            cols: st.support.iter().map(|&i| panel.column(i)).collect(),
            t_len: panel.n_periods(),
            kinks: u.kinks(),
            jumps: u.jumps(),
            slopes: u.segment_slopes(),
        };
        let t_len = prob.t_len;
        let inv_t = 1.0 / t_len as f64;
        let n_kinks = prob.kinks.len();

        if u.is_constant() || m == 1 {
            if m > 1 {
                st.lambda = vec![1.0 / m as f64; m];
            }
            return Ok(finish(&prob, u, st, 0, LpStatus::Optimal, None));
        }

        let mut r = Vec::new();
        prob.returns(&st.lambda, &mut r);
        let mut pinned = vec![false; t_len];
        for tt in &st.tight {
            if let Tight::Kink { t, .. } = *tt {
                pinned[t] = true;
            }
        }

        let max_pivots = 50 * (t_len + m) + 1000;
        let mut pivots = 0usize;
        let mut since_refactor = 0usize;
        let mut degenerate = 0usize;
        let mut g = vec![0.0; m];
        let mut wt = vec![0.0; t_len];
        let mut dir = vec![0.0; m];
        let mut rate = vec![0.0; t_len];
        let mut events: Vec<Event> = Vec::new();
        let mut crossed: Vec<(usize, u16)> = Vec::new();

        loop {
            if pivots >= max_pivots {
                let msg = format!("pivot limit {max_pivots} reached (T={t_len}, |S|={m})");
                return Ok(finish(&prob, u, st, pivots, LpStatus::NumericalFailure, Some(msg)));
            }

            // objective gradient with every free observation on its key line
            for t in 0..t_len {
                wt[t] = if pinned[t] { 0.0 } else { prob.slopes[st.keys[t] as usize] };
            }
            for (gi, c) in g.iter_mut().zip(&prob.cols) {
                *gi = inv_t * c.iter().zip(&wt).map(|(x, w)| x * w).sum::<f64>();
            }

            // pricing
            let bland = degenerate >= self.degenerate_limit;
            let mut entering: Option<(usize, f64, f64, usize)> = None; // (row, sign, rc, id)
            for (j, tt) in st.tight.iter().enumerate() {
                let d: f64 = (0..m).map(|i| g[i] * st.minv[i * m + j + 1]).sum();
                let mut consider = |sign: f64, rc: f64, id: usize| {
                    if rc <= self.optimality_tol {
                        return;
                    }
                    let better = match entering {
                        None => true,
                        Some((_, _, best, best_id)) => {
                            if bland {
                                id < best_id
                            } else {
                                rc > best
                            }
                        }
                    };
                    if better {
                        entering = Some((j, sign, rc, id));
                    }
                };
                match *tt {
                    Tight::Facet(i) => consider(1.0, d, i),
                    Tight::Kink { t, k } => {
                        let base = m + 2 * (t * n_kinks + k);
                        consider(1.0, d + prob.slopes[k + 1] * inv_t, base);
                        consider(-1.0, -d - prob.slopes[k] * inv_t, base + 1);
                    }
                }
            }
            let Some((j, sign, rc, _)) = entering else {
                break;
            };
            pivots += 1;

            for (i, di) in dir.iter_mut().enumerate() {
                *di = sign * st.minv[i * m + j + 1];
            }
            rate.iter_mut().for_each(|x| *x = 0.0);
            for (c, &di) in prob.cols.iter().zip(&dir) {
                if di != 0.0 {
                    for (rt, x) in rate.iter_mut().zip(c.iter()) {
                        *rt += di * x;
                    }
                }
            }

            // weights reaching zero
            let mut s_hard = f64::INFINITY;
            let mut i_hard = usize::MAX;
            for i in 0..m {
                if dir[i] < -self.pivot_tol {
                    let s = st.lambda[i].max(0.0) / -dir[i];
                    if s < s_hard {
                        s_hard = s;
                        i_hard = i;
                    }
                }
            }

            let entering_kink = match st.tight[j] {
                Tight::Kink { t, k } => Some((t, if sign > 0.0 { k + 1 } else { k } as u16)),
                Tight::Facet(_) => None,
            };

            events.clear();
            for t in 0..t_len {
                let seg = match entering_kink {
                    Some((te, seg)) if te == t => seg as usize,
                    _ if pinned[t] => continue,
                    _ => st.keys[t] as usize,
                };
                let rt = rate[t];
                if rt.abs() <= 1e-13 {
                    continue;
                }
                if rt > 0.0 {
                    for k in seg..n_kinks {
                        let s = ((prob.kinks[k] - r[t]) / rt).max(0.0);
                        if s >= s_hard {
                            break;
                        }
                        events.push(Event {
                            s,
                            t,
                            k,
                            drop: prob.jumps[k] * rt * inv_t,
                            new_seg: (k + 1) as u16,
                        });
                    }
                } else {
                    for k in (0..seg).rev() {
                        let s = ((prob.kinks[k] - r[t]) / rt).max(0.0);
                        if s >= s_hard {
                            break;
                        }
                        events.push(Event {
                            s,
                            t,
                            k,
                            drop: -prob.jumps[k] * rt * inv_t,
                            new_seg: k as u16,
                        });
                    }
                }
            }

            let mut heap = BinaryHeap::from(std::mem::take(&mut events));
            let mut deriv = rc;
            let mut leaving: Option<(Tight, f64)> = None;
            crossed.clear();
            while let Some(ev) = heap.pop() {
                deriv -= ev.drop;
                if deriv <= 0.0 {
                    leaving = Some((Tight::Kink { t: ev.t, k: ev.k }, ev.s));
                    break;
                }
                crossed.push((ev.t, ev.new_seg));
            }
            events = heap.into_vec();
            let (leave, step) = match leaving {
                Some(l) => l,
                None if s_hard.is_finite() => (Tight::Facet(i_hard), s_hard),
                None => {
                    let msg = "unbounded edge on a bounded simplex".to_string();
                    return Ok(finish(&prob, u, st, pivots, LpStatus::NumericalFailure, Some(msg)));
                }
            };

            // move
            for (l, d) in st.lambda.iter_mut().zip(&dir) {
                *l += step * d;
            }
            for (rt, d) in r.iter_mut().zip(&rate) {
                *rt += step * d;
            }
            if let Some((te, seg)) = entering_kink {
                pinned[te] = false;
                st.keys[te] = seg;
            }
            for &(t, seg) in &crossed {
                st.keys[t] = seg;
            }
            match leave {
                Tight::Facet(i) => st.lambda[i] = 0.0,
                Tight::Kink { t, k } => {
                    r[t] = prob.kinks[k];
                    pinned[t] = true;
                }
            }

            // basis update: row j+1 of the working basis becomes h(leave)
            let same_row = matches!(
                (st.tight[j], leave),
                (Tight::Kink { t: a, .. }, Tight::Kink { t: b, .. }) if a == b
            );
            if !same_row {
                let h = prob.h_row(leave, m);
                let mut w = vec![0.0; m];
                for (i, &hi) in h.iter().enumerate() {
                    if hi != 0.0 {
                        let row = &st.minv[i * m..(i + 1) * m];
                        for (wc, v) in w.iter_mut().zip(row) {
                            *wc += hi * v;
                        }
                    }
                }
                let denom = w[j + 1];
                if denom.abs() < self.pivot_tol * 1e-3 {
                    let msg = format!("near-singular pivot {denom:e}");
                    return Ok(finish(&prob, u, st, pivots, LpStatus::NumericalFailure, Some(msg)));
                }
                w[j + 1] -= 1.0;
                let col: Vec<f64> = (0..m).map(|i| st.minv[i * m + j + 1]).collect();
                for i in 0..m {
                    let f = col[i] / denom;
                    if f != 0.0 {
                        let row = &mut st.minv[i * m..(i + 1) * m];
                        for (x, wc) in row.iter_mut().zip(&w) {
                            *x -= f * wc;
                        }
                    }
                }
            }
            st.tight[j] = leave;

            degenerate = if step == 0.0 { degenerate + 1 } else { 0 };
            since_refactor += 1;
            if since_refactor >= self.refactor_every {
                since_refactor = 0;
                if !refactor(&prob, &mut st) {
                    let msg = "working basis became singular".to_string();
                    return Ok(finish(&prob, u, st, pivots, LpStatus::NumericalFailure, Some(msg)));
                }
                prob.returns(&st.lambda, &mut r);
                for tt in &st.tight {
                    if let Tight::Kink { t, k } = *tt {
                        r[t] = prob.kinks[k];
                    }
                }
            }
        }

        Ok(finish(&prob, u, st, pivots, LpStatus::Optimal, None))
    }
}

/// Rebuilds the inverse and the vertex from the tight set.
fn refactor(prob: &Problem<'_>, st: &mut WarmState) -> bool {
    let m = st.support.len();
    let mut mat = DMatrix::<f64>::zeros(m, m);
    let mut rhs = vec![0.0; m];
    for i in 0..m {
        mat[(0, i)] = 1.0;
    }
    rhs[0] = 1.0;
    for (r, tt) in st.tight.iter().enumerate() {
        let h = prob.h_row(*tt, m);
        for i in 0..m {
            mat[(r + 1, i)] = h[i];
        }
        rhs[r + 1] = prob.rhs(*tt);
    }
    let Some(inv) = mat.try_inverse() else {
        return false;
    };
    for i in 0..m {
        for j in 0..m {
            st.minv[i * m + j] = inv[(i, j)];
        }
    }
    for i in 0..m {
        st.lambda[i] = (0..m).map(|j| inv[(i, j)] * rhs[j]).sum();
    }
    for tt in &st.tight {
        if let Tight::Facet(i) = *tt {
            st.lambda[i] = 0.0;
        }
    }
    true
}

fn finish(
    prob: &Problem<'_>,
    u: &RussellSeoUtility,
    mut st: WarmState,
    pivots: usize,
    status: LpStatus,
    diagnostics: Option<String>,
) -> (LpSolution, WarmState) {
    for l in st.lambda.iter_mut() {
        if *l < 0.0 {
            *l = 0.0;
        }
    }
    let s: f64 = st.lambda.iter().sum();
    if s > 0.0 {
        st.lambda.iter_mut().for_each(|l| *l /= s);
    }
    let mut r = Vec::new();
    prob.returns(&st.lambda, &mut r);
    let value = u.mean(&r);
    let sol = LpSolution {
        status,
        value,
        weights: SimplexPortfolio {
            assets: st.support.clone(),
            weights: st.lambda.clone(),
        },
        pivots,
        diagnostics,
    };
    (sol, st)
}
