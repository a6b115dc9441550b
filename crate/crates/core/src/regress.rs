//! Ordinary least squares with an intercept, plain or Newey–West standard errors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub const INTERCEPT: &str = "const";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "lags")]
pub enum SeKind {
    #[default]
    Plain,
    /// Bartlett-weighted HAC; `⌊0.75·T^{1/3}⌋` lags when unset.
    NeweyWest(Option<usize>),
}

pub fn default_nw_lags(t: usize) -> usize {
    (0.75 * (t as f64).cbrt()).floor() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    /// Intercept first, then one entry per regressor.
    pub coefficients: Vec<Coefficient>,
    pub r_squared: f64,
    pub adj_r_squared: f64,
    pub observations: usize,
    pub df_resid: usize,
    pub se_kind: SeKind,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl RegressionResult {
    pub fn intercept(&self) -> &Coefficient {
        &self.coefficients[0]
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["term", "coef", "std_error", "t_stat", "p_value"])?;
        for c in &self.coefficients {
            out.write_record([
                c.name.clone(),
                c.estimate.to_string(),
                c.std_error.to_string(),
                c.t_stat.to_string(),
                c.p_value.to_string(),
            ])?;
        }
        out.write_record(["r_squared", &self.r_squared.to_string(), "", "", ""])?;
        out.write_record(["observations", &self.observations.to_string(), "", "", ""])?;
        out.flush().map_err(|e| Error::io("csv output", e))?;
        Ok(())
    }
}

/// Names of columns that lie (numerically) in the span of earlier columns.
fn collinear_columns(x: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut bad = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let scale = col.norm();
        let mut v = col.clone();
        // two passes keep the projection accurate
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v -= b * c;
            }
        }
        let n = v.norm();
        if scale == 0.0 || n <= 1e-10 * scale.max(1e-300) {
            bad.push(names[j].clone());
        } else {
            basis.push(v / n);
        }
    }
    bad
}

/// Regresses `y` on an intercept and the columns of `x`.
pub fn ols(y: &[f64], x: &[Vec<f64>], names: &[String], se_kind: SeKind) -> Result<RegressionResult> {
    let t = y.len();
    let k = x.len();
    if names.len() != k {
        return Err(Error::Validation("one name per regressor required".into()));
    }
    if let Some(c) = x.iter().position(|c| c.len() != t) {
        return Err(Error::Validation(format!("regressor {} has {} rows, expected {t}", names[c], x[c].len())));
    }
    if t <= k + 1 {
        return Err(Error::Parameter(format!("{t} observations cannot identify {} coefficients", k + 1)));
    }
    if y.iter().chain(x.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite value in regression data".into()));
    }
    let mut all_names = vec![INTERCEPT.to_string()];
    all_names.extend(names.iter().cloned());
    let xm = DMatrix::from_fn(t, k + 1, |i, j| if j == 0 { 1.0 } else { x[j - 1][i] });
    let bad = collinear_columns(&xm, &all_names);
    if !bad.is_empty() {
        return Err(Error::RankDeficient(bad));
    }
    let yv = DVector::from_column_slice(y);
    let qr = xm.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k + 1, k + 1))
        .ok_or_else(|| Error::Numerical("triangular inverse failed".into()))?;
    let xtx_inv = &r_inv * r_inv.transpose();

    let fitted = &xm * &beta;
    let resid: Vec<f64> = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
    let df = t - k - 1;
    let ssr: f64 = resid.iter().map(|e| e * e).sum();
    let ybar = y.iter().sum::<f64>() / t as f64;
    let sst: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let r_squared = if sst > 0.0 { 1.0 - ssr / sst } else { f64::NAN };
    let adj_r_squared = 1.0 - (1.0 - r_squared) * (t - 1) as f64 / df as f64;

    let cov = match se_kind {
        SeKind::Plain => &xtx_inv * (ssr / df as f64),
        SeKind::NeweyWest(lags) => {
            let l = lags.unwrap_or_else(|| default_nw_lags(t));
            let mut s = DMatrix::<f64>::zeros(k + 1, k + 1);
            let u: Vec<DVector<f64>> = (0..t).map(|i| xm.row(i).transpose() * resid[i]).collect();
            for ui in &u {
                s += ui * ui.transpose();
            }
            for lag in 1..=l.min(t - 1) {
                let w = 1.0 - lag as f64 / (l + 1) as f64;
                let mut g = DMatrix::<f64>::zeros(k + 1, k + 1);
                for i in lag..t {
                    g += &u[i] * u[i - lag].transpose();
                }
                s += (&g + g.transpose()) * w;
            }
            &xtx_inv * s * &xtx_inv
        }
    };
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Numerical(e.to_string()))?;
    let coefficients = (0..=k)
        .map(|j| {
            let se = cov[(j, j)].max(0.0).sqrt();
            let ts = beta[j] / se;
            Coefficient {
                name: all_names[j].clone(),
                estimate: beta[j],
                std_error: se,
                t_stat: ts,
                p_value: if ts.is_finite() { 2.0 * dist.sf(ts.abs()) } else { 0.0 },
            }
        })
        .collect();
    Ok(RegressionResult {
        coefficients,
        r_squared,
        adj_r_squared,
        observations: t,
        df_resid: df,
        se_kind,
        fitted: fitted.iter().copied().collect(),
        residuals: resid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn exact_fit() {
        let x: Vec<f64> = (0..8).map(|i| i as f64 * 0.5).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 + 3.0 * v).collect();
        let r = ols(&y, &[x], &names(&["x"]), SeKind::Plain).unwrap();
        assert!((r.coefficients[0].estimate - 2.0).abs() < 1e-12);
        assert!((r.coefficients[1].estimate - 3.0).abs() < 1e-12);
        assert!((r.r_squared - 1.0).abs() < 1e-12);
        assert!(r.residuals.iter().all(|e| e.abs() < 1e-12));
    }

    #[test]
    fn three_point_hand_example() {
        let r = ols(&[1.0, 3.0, 4.0], &[vec![0.0, 1.0, 2.0]], &names(&["x"]), SeKind::Plain).unwrap();
        let (a, b) = (&r.coefficients[0], &r.coefficients[1]);
        assert!((a.estimate - 7.0 / 6.0).abs() < 1e-12 && (b.estimate - 1.5).abs() < 1e-12);
        assert!((a.t_stat - 3.1304951684997055).abs() < 1e-10);
        assert!((b.t_stat - 5.196152422706632).abs() < 1e-10);
        assert!((a.t_stat - a.estimate / a.std_error).abs() < 1e-15);
    }

    #[test]
    fn intercept_only_is_mean() {
        let y = [0.1, 0.4, -0.2, 0.5];
        let r = ols(&y, &[], &[], SeKind::Plain).unwrap();
        assert!((r.intercept().estimate - 0.2).abs() < 1e-15);
    }

    #[test]
    fn zero_column_is_rank_deficient() {
        let y = [0.1, 0.4, -0.2, 0.5, 0.3];
        let x = vec![vec![1.0, 2.0, 3.0, 5.0, 4.0], vec![0.0; 5]];
        match ols(&y, &x, &names(&["MKT", "ZERO"]), SeKind::Plain) {
            Err(Error::RankDeficient(c)) => assert_eq!(c, vec!["ZERO".to_string()]),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
        let dup = vec![vec![1.0, 2.0, 3.0, 5.0, 4.0], vec![2.0, 4.0, 6.0, 10.0, 8.0]];
        assert!(matches!(ols(&y, &dup, &names(&["A", "B"]), SeKind::Plain), Err(Error::RankDeficient(_))));
    }

    fn reference_data() -> (Vec<f64>, Vec<Vec<f64>>) {
        let y = vec![0.01, -0.02, 0.03, 0.015, -0.005, 0.02, 0.0, 0.025, -0.01, 0.012];
        let x1 = vec![0.02, -0.01, 0.025, 0.01, 0.0, 0.015, -0.005, 0.03, -0.02, 0.01];
        let x2 = vec![0.1, 0.3, -0.2, 0.0, 0.05, -0.1, 0.2, 0.15, -0.05, 0.12];
        (y, vec![x1, x2])
    }

    #[test]
    fn matches_statsmodels_plain() {
        let (y, x) = reference_data();
        let r = ols(&y, &x, &names(&["x1", "x2"]), SeKind::Plain).unwrap();
        let se = [0.0021440653150489957, 0.11754387794332799, 0.012658067830227495];
        let p = [0.1360057402984537, 0.00022883333997043414, 0.02735894424053027];
        for (j, c) in r.coefficients.iter().enumerate() {
            assert!((c.std_error - se[j]).abs() < 1e-12);
            assert!((c.p_value - p[j]).abs() < 1e-10);
        }
        assert!((r.r_squared - 0.9115446446624074).abs() < 1e-12);
    }

    #[test]
    fn matches_statsmodels_newey_west() {
        let (y, x) = reference_data();
        let r = ols(&y, &x, &names(&["x1", "x2"]), SeKind::NeweyWest(Some(2))).unwrap();
        let b = [0.0036111395940881157, 0.8124725974117812, -0.035169896046955765];
        let se = [0.001043558789118611, 0.04073369269494909, 0.00903532675949285];
        for (j, c) in r.coefficients.iter().enumerate() {
            assert!((c.estimate - b[j]).abs() < 1e-12);
            assert!((c.std_error - se[j]).abs() < 1e-12);
        }
        assert_eq!(default_nw_lags(1000), 7);
    }

    #[test]
    fn independent_regressor_is_insignificant() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 5000;
        let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let r = ols(&y, &[x], &names(&["x"]), SeKind::Plain).unwrap();
        let b = &r.coefficients[1];
        assert!(b.estimate.abs() < 3.0 * b.std_error);
        for (i, (f, e)) in r.fitted.iter().zip(&r.residuals).enumerate() {
            assert!((f + e - y[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn too_few_observations() {
        assert!(ols(&[1.0, 2.0], &[vec![0.0, 1.0]], &names(&["x"]), SeKind::Plain).is_err());
    }
}
