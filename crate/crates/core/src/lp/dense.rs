//! Textbook LP formulation solved with a dense two-phase tableau simplex.

use std::fmt::Write as _;
use std::io::Write;

use super::{check_support, needs_cap, LpSolution, LpStatus, SimplexPortfolio, UtilitySolver};
use crate::error::{Error, Result};
use crate::panel::ReturnPanel;
use crate::utility::RussellSeoUtility;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSense {
    Le,
    Eq,
}

/// `max cᵀx` subject to linear rows and `x ≥ 0`.
#[derive(Debug, Clone, Default)]
pub struct DenseLp {
    pub objective: Vec<f64>,
    pub rows: Vec<(Vec<f64>, RowSense, f64)>,
    pub var_names: Vec<String>,
    pub row_names: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct DenseOutcome {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub value: f64,
    pub pivots: usize,
}

const EPS: f64 = 1e-10;

struct Tableau {
    a: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    obj: Vec<f64>,
    obj_rhs: f64,
    basis: Vec<usize>,
    pivots: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.a[r][c];
        self.a[r].iter_mut().for_each(|x| *x /= p);
        self.rhs[r] /= p;
        let (prow, prhs) = (self.a[r].clone(), self.rhs[r]);
        for i in 0..self.a.len() {
            if i != r {
                let f = self.a[i][c];
                if f != 0.0 {
                    for (x, y) in self.a[i].iter_mut().zip(&prow) {
                        *x -= f * y;
                    }
                    self.rhs[i] -= f * prhs;
                }
            }
        }
        let f = self.obj[c];
        if f != 0.0 {
            for (x, y) in self.obj.iter_mut().zip(&prow) {
                *x -= f * y;
            }
            self.obj_rhs -= f * prhs;
        }
        self.basis[r] = c;
        self.pivots += 1;
    }

    /// Bland's rule iterations on the current objective row.
    fn optimize(&mut self, allowed: usize, limit: usize) -> Option<bool> {
        loop {
            if self.pivots > limit {
                return None;
            }
            let Some(c) = (0..allowed).find(|&j| self.obj[j] > EPS) else {
                return Some(true);
            };
            let mut best: Option<(f64, usize, usize)> = None;
            for i in 0..self.a.len() {
                let aic = self.a[i][c];
                if aic > EPS {
                    let ratio = self.rhs[i] / aic;
                    let better = match best {
                        None => true,
                        Some((br, bb, _)) => ratio < br - EPS || (ratio <= br + EPS && self.basis[i] < bb),
                    };
                    if better {
                        best = Some((ratio, self.basis[i], i));
                    }
                }
            }
            match best {
                Some((_, _, r)) => self.pivot(r, c),
                None => return Some(false),
            }
        }
    }
}

impl DenseLp {
    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn solve(&self) -> DenseOutcome {
        let n = self.n_vars();
        let m = self.rows.len();
        let n_slack = self.rows.iter().filter(|r| r.1 == RowSense::Le).count();
        let n_art = m;
        let width = n + n_slack + n_art;
        let mut a = vec![vec![0.0; width]; m];
        let mut rhs = vec![0.0; m];
        let mut basis = vec![0; m];
        let mut slack = n;
        for (i, (coef, sense, b)) in self.rows.iter().enumerate() {
            let flip = if *b < 0.0 { -1.0 } else { 1.0 };
            for (j, &v) in coef.iter().enumerate() {
                a[i][j] = flip * v;
            }
            rhs[i] = flip * b;
            if *sense == RowSense::Le {
                a[i][slack] = flip;
                slack += 1;
            }
            a[i][n + n_slack + i] = 1.0;
            basis[i] = n + n_slack + i;
        }
        // phase 1: maximize −Σ artificials
        let mut obj = vec![0.0; width];
        let mut obj_rhs = 0.0;
        for i in 0..m {
            for j in 0..n + n_slack {
                obj[j] += a[i][j];
            }
            obj_rhs += rhs[i];
        }
        let limit = 50 * (width + m) + 10_000;
        let mut tab = Tableau {
            a,
            rhs,
            obj,
            obj_rhs,
            basis,
            pivots: 0,
        };
        let failure = |pivots| DenseOutcome {
            status: LpStatus::NumericalFailure,
            x: vec![0.0; n],
            value: f64::NAN,
            pivots,
        };
        if tab.optimize(n + n_slack, limit).is_none() {
            return failure(tab.pivots);
        }
        if tab.obj_rhs > 1e-8 {
            return DenseOutcome {
                status: LpStatus::Infeasible,
                x: vec![0.0; n],
                value: f64::NAN,
                pivots: tab.pivots,
            };
        }
        for i in 0..m {
            if tab.basis[i] >= n + n_slack {
                if let Some(c) = (0..n + n_slack).find(|&j| tab.a[i][j].abs() > 1e-9) {
                    tab.pivot(i, c);
                }
            }
        }
        // phase 2
        let mut obj = vec![0.0; width];
        obj[..n].copy_from_slice(&self.objective);
        let mut obj_rhs = 0.0;
        for i in 0..m {
            let c = obj[tab.basis[i]];
            if c != 0.0 {
                for (x, y) in obj.iter_mut().zip(&tab.a[i]) {
                    *x -= c * y;
                }
                obj_rhs -= c * tab.rhs[i];
            }
        }
        tab.obj = obj;
        tab.obj_rhs = obj_rhs;
        match tab.optimize(n + n_slack, limit) {
            None => failure(tab.pivots),
            Some(false) => DenseOutcome {
                status: LpStatus::NumericalFailure,
                x: vec![0.0; n],
                value: f64::INFINITY,
                pivots: tab.pivots,
            },
            Some(true) => {
                let mut x = vec![0.0; n];
                for i in 0..m {
                    if tab.basis[i] < n {
                        x[tab.basis[i]] = tab.rhs[i];
                    }
                }
                let value = self.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
                DenseOutcome {
                    status: LpStatus::Optimal,
                    x,
                    value,
                    pivots: tab.pivots,
                }
            }
        }
    }

    /// CPLEX LP format text.
    pub fn to_lp_string(&self) -> String {
        let name = |j: usize| {
            self.var_names
                .get(j)
                .cloned()
                .unwrap_or_else(|| format!("x{j}"))
        };
        let term_list = |coef: &[f64]| {
            let mut s = String::new();
            for (j, &c) in coef.iter().enumerate() {
                if c != 0.0 {
                    let sign = if c < 0.0 { "-" } else { "+" };
                    let _ = write!(s, " {sign} {:.17e} {}", c.abs(), name(j));
                }
            }
            if s.is_empty() {
                s.push_str(" 0 x0");
            }
            s
        };
        let mut out = String::from("\\ expected-utility LP\nMaximize\n obj:");
        out.push_str(&term_list(&self.objective));
        out.push_str("\nSubject To\n");
        for (i, (coef, sense, b)) in self.rows.iter().enumerate() {
            let rn = self.row_names.get(i).cloned().unwrap_or_else(|| format!("c{i}"));
            let op = match sense {
                RowSense::Le => "<=",
                RowSense::Eq => "=",
            };
            let _ = writeln!(out, " {rn}:{} {op} {:.17e}", term_list(coef), b);
        }
        out.push_str("End\n");
        out
    }

    pub fn write_lp<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.to_lp_string().as_bytes())
    }
}

/// The utility LP for one utility and support, with `y_t` shifted to be nonnegative.
#[derive(Debug, Clone)]
pub struct UtilityLpInstance {
    pub lp: DenseLp,
    /// `y_t = y'_t + shift`.
    pub shift: f64,
    pub t_len: usize,
    pub support: Vec<usize>,
}

impl UtilityLpInstance {
    pub fn new(panel: &ReturnPanel, u: &RussellSeoUtility, support: &[usize]) -> Result<Self> {
        check_support(panel, support)?;
        let t_len = panel.n_periods();
        let s = support.len();
        let lines: Vec<(f64, f64)> = u.lines().collect();
        let min_ret = support
            .iter()
            .flat_map(|&i| panel.column(i).iter().copied())
            .fold(0.0f64, f64::min);
        let max_c1 = lines.iter().map(|l| l.0).fold(0.0f64, f64::max);
        let min_c0 = lines.iter().map(|l| l.1).fold(0.0f64, f64::min);
        // every line is bounded below by this on the feasible region
        let shift = min_c0 + max_c1 * min_ret - 1.0;
        if !shift.is_finite() {
            return Err(Error::Numerical("non-finite LP bound".into()));
        }
        let nv = t_len + s;
        let mut lp = DenseLp {
            objective: vec![0.0; nv],
            ..Default::default()
        };
        for t in 0..t_len {
            lp.objective[t] = 1.0 / t_len as f64;
            lp.var_names.push(format!("y{}", t + 1));
        }
        for &i in support {
            lp.var_names.push(format!("w_{}", sanitize(&panel.assets()[i])));
        }
        for t in 0..t_len {
            for (n, &(c1, c0)) in u.active().iter().zip(&lines) {
                let mut row = vec![0.0; nv];
                row[t] = 1.0;
                for (l, &i) in support.iter().enumerate() {
                    row[t_len + l] = -c1 * panel.value(t, i);
                }
                lp.rows.push((row, RowSense::Le, c0 - shift));
                lp.row_names.push(format!("line_t{}_n{}", t + 1, n + 1));
            }
        }
        if needs_cap(panel, u, support) {
            for t in 0..t_len {
                let mut row = vec![0.0; nv];
                row[t] = 1.0;
                lp.rows.push((row, RowSense::Le, -shift));
                lp.row_names.push(format!("cap_t{}", t + 1));
            }
        }
        let mut row = vec![0.0; nv];
        row[t_len..].iter_mut().for_each(|x| *x = 1.0);
        lp.rows.push((row, RowSense::Eq, 1.0));
        lp.row_names.push("budget".into());
        Ok(Self {
            lp,
            shift,
            t_len,
            support: support.to_vec(),
        })
    }

    pub fn n_constraints(&self) -> usize {
        self.lp.rows.len()
    }

    pub fn n_variables(&self) -> usize {
        self.lp.n_vars()
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect()
}

/// Solves the utility LP verbatim. Intended for cross-checking and small instances.
#[derive(Debug, Clone, Copy, Default)]
pub struct DenseSimplexSolver;

impl UtilitySolver for DenseSimplexSolver {
    fn solve(&self, panel: &ReturnPanel, u: &RussellSeoUtility, support: &[usize]) -> Result<LpSolution> {
        let inst = UtilityLpInstance::new(panel, u, support)?;
        let out = inst.lp.solve();
        let mut w: Vec<f64> = out.x[inst.t_len..].iter().map(|x| x.max(0.0)).collect();
        let s: f64 = w.iter().sum();
        if s > 0.0 {
            w.iter_mut().for_each(|x| *x /= s);
        }
        let weights = SimplexPortfolio {
            assets: support.to_vec(),
            weights: w,
        };
        let value = match out.status {
            LpStatus::Optimal => u.mean(&weights.returns(panel)),
            _ => f64::NAN,
        };
        Ok(LpSolution {
            status: out.status,
            value,
            weights,
            pivots: out.pivots,
            diagnostics: (out.status != LpStatus::Optimal).then(|| format!("tableau ended {:?}", out.status)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_lp() {
        // max x + y, x + 2y ≤ 4, 3x + y ≤ 6  → (1.6, 1.2)
        let lp = DenseLp {
            objective: vec![1.0, 1.0],
            rows: vec![
                (vec![1.0, 2.0], RowSense::Le, 4.0),
                (vec![3.0, 1.0], RowSense::Le, 6.0),
            ],
            ..Default::default()
        };
        let o = lp.solve();
        assert_eq!(o.status, LpStatus::Optimal);
        assert!((o.value - 2.8).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_equality() {
        let lp = DenseLp {
            objective: vec![1.0],
            rows: vec![(vec![1.0], RowSense::Le, -1.0)],
            ..Default::default()
        };
        assert_eq!(lp.solve().status, LpStatus::Infeasible);
        let lp = DenseLp {
            objective: vec![-1.0, 0.0],
            rows: vec![(vec![1.0, 1.0], RowSense::Eq, 1.0), (vec![-1.0, 0.0], RowSense::Le, -0.25)],
            ..Default::default()
        };
        let o = lp.solve();
        assert!((o.value + 0.25).abs() < 1e-12);
    }

    #[test]
    fn lp_text_has_sections() {
        let lp = DenseLp {
            objective: vec![1.0, 0.0],
            rows: vec![(vec![1.0, 1.0], RowSense::Eq, 1.0)],
            var_names: vec!["a".into(), "b".into()],
            row_names: vec!["budget".into()],
        };
        let s = lp.to_lp_string();
        assert!(s.contains("Maximize") && s.contains("Subject To") && s.contains("budget:") && s.ends_with("End\n"));
    }
}
