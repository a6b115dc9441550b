//! Monte Carlo designs with jointly normal returns and selection-recovery scoring.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::ReturnPanel;
use crate::spanning::{fss_select, SpanningConfig};
use crate::utility::{DEFAULT_N1, DEFAULT_N2};

/// Size of each of the two dominating blocks in the second design.
pub const BLOCK_SIZE: usize = 5;
pub const EXPERIMENT_TWO_ASSETS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    /// Mutually independent assets with common mean and volatility.
    One,
    /// Two dominating blocks of five assets among fifty.
    Two,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McDesign {
    pub experiment: Experiment,
    pub n_assets: usize,
    pub t_obs: usize,
    pub q: usize,
    pub replications: usize,
    pub seed: u64,
    /// Per-asset mean for the independent design.
    pub mean: f64,
    /// Per-asset volatility for the independent design.
    pub sd: f64,
    pub n1: usize,
    pub n2: usize,
}

impl McDesign {
    pub fn experiment_one(n_assets: usize, t_obs: usize, q: usize, replications: usize, seed: u64) -> Self {
        Self {
            experiment: Experiment::One,
            n_assets,
            t_obs,
            q,
            replications,
            seed,
            mean: 0.01,
            sd: 0.05,
            n1: DEFAULT_N1,
            n2: DEFAULT_N2,
        }
    }

    pub fn experiment_two(t_obs: usize, q: usize, replications: usize, seed: u64) -> Self {
        Self {
            experiment: Experiment::Two,
            n_assets: EXPERIMENT_TWO_ASSETS,
            t_obs,
            q,
            replications,
            seed,
            mean: 0.1,
            sd: 0.5,
            n1: DEFAULT_N1,
            n2: DEFAULT_N2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment == Experiment::Two && self.n_assets != EXPERIMENT_TWO_ASSETS {
            return Err(Error::Parameter(format!(
                "the two-block design has {EXPERIMENT_TWO_ASSETS} assets, got {}",
                self.n_assets
            )));
        }
        if self.n_assets == 0 || self.t_obs < 2 || self.q == 0 || self.replications == 0 {
            return Err(Error::Parameter(
                "assets, q and replications must be positive and T at least 2".into(),
            ));
        }
        if !(self.sd > 0.0) || !self.mean.is_finite() {
            return Err(Error::Parameter("volatility must be positive and mean finite".into()));
        }
        Ok(())
    }

    /// Mean vector, volatility vector and common pairwise correlation.
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>, f64) {
        match self.experiment {
            Experiment::One => (vec![self.mean; self.n_assets], vec![self.sd; self.n_assets], 0.0),
            Experiment::Two => {
                let mut mu = vec![0.1; EXPERIMENT_TWO_ASSETS];
                let mut sd = vec![0.5; EXPERIMENT_TWO_ASSETS];
                for i in 0..BLOCK_SIZE {
                    mu[i] = 0.3;
                    sd[i] = 0.15;
                    mu[BLOCK_SIZE + i] = 0.15;
                    sd[BLOCK_SIZE + i] = 0.1;
                }
                (mu, sd, 0.001)
            }
        }
    }

    /// Indices of the dominating assets, empty for the independent design.
    pub fn dominating_set(&self) -> Vec<usize> {
        match self.experiment {
            Experiment::One => Vec::new(),
            Experiment::Two => (0..2 * BLOCK_SIZE).collect(),
        }
    }

    fn cholesky(&self) -> Result<DMatrix<f64>> {
        let (_, sd, rho) = self.moments();
        let p = sd.len();
        let cov = DMatrix::from_fn(p, p, |i, j| if i == j { sd[i] * sd[i] } else { rho * sd[i] * sd[j] });
        cov.cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::Numerical("design covariance is not positive definite".into()))
    }
}

/// Draws one panel; identical `(seed, replication)` pairs give identical panels.
pub fn generate(design: &McDesign, replication: u64) -> Result<ReturnPanel> {
    design.validate()?;
    let l = design.cholesky()?;
    let (mu, _, _) = design.moments();
    let p = mu.len();
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    rng.set_stream(replication);
    let mu = DVector::from_vec(mu);
    let mut cols = vec![Vec::with_capacity(design.t_obs); p];
    for _ in 0..design.t_obs {
        let z = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
        let x = &mu + &l * z;
        for (c, v) in cols.iter_mut().zip(x.iter()) {
            c.push(*v);
        }
    }
    ReturnPanel::synthetic(cols)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: u64,
    pub selected: usize,
    pub loss: f64,
    pub support: Vec<String>,
    /// Whether every selected asset lies in the dominating set (two-block design only).
    pub within_dominating: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McReport {
    pub design: McDesign,
    pub average_selected: f64,
    pub sd_selected: f64,
    pub average_loss: f64,
    pub se_loss: f64,
    pub share_within_dominating: Option<f64>,
    pub records: Vec<ReplicationRecord>,
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (m, 0.0);
    }
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

pub fn run_replication(design: &McDesign, replication: u64) -> Result<ReplicationRecord> {
    let panel = generate(design, replication)?;
    let cfg = SpanningConfig {
        n1: design.n1,
        n2: design.n2,
        ..SpanningConfig::new(design.q)
    };
    let r = fss_select(&panel, &cfg)?;
    let dom = design.dominating_set();
    Ok(ReplicationRecord {
        replication,
        selected: r.support.len(),
        loss: r.loss,
        within_dominating: (!dom.is_empty()).then(|| r.support.iter().all(|i| dom.contains(i))),
        support: r.names,
    })
}

pub fn run_experiment(design: &McDesign) -> Result<McReport> {
    design.validate()?;
    let records: Vec<ReplicationRecord> = (0..design.replications as u64)
        .into_par_iter()
        .map(|r| run_replication(design, r))
        .collect::<Result<_>>()?;
    let counts: Vec<f64> = records.iter().map(|r| r.selected as f64).collect();
    let losses: Vec<f64> = records.iter().map(|r| r.loss).collect();
    let (average_selected, sd_selected) = mean_sd(&counts);
    let (average_loss, sd_loss) = mean_sd(&losses);
    let share = match design.experiment {
        Experiment::Two => {
            let hits = records.iter().filter(|r| r.within_dominating == Some(true)).count();
            Some(hits as f64 / records.len() as f64)
        }
        Experiment::One => None,
    };
    Ok(McReport {
        design: design.clone(),
        average_selected,
        sd_selected,
        average_loss,
        se_loss: sd_loss / (records.len() as f64).sqrt(),
        share_within_dominating: share,
        records,
    })
}

impl McReport {
    /// One summary row per design.
    pub fn write_summary_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "experiment",
            "n_assets",
            "T",
            "q",
            "replications",
            "avg_selected",
            "sd_selected",
            "avg_loss",
            "se_loss",
            "share_within_dominating",
        ])?;
        let d = &self.design;
        out.write_record([
            match d.experiment {
                Experiment::One => "1".to_string(),
                Experiment::Two => "2".to_string(),
            },
            d.n_assets.to_string(),
            d.t_obs.to_string(),
            d.q.to_string(),
            d.replications.to_string(),
            self.average_selected.to_string(),
            self.sd_selected.to_string(),
            self.average_loss.to_string(),
            self.se_loss.to_string(),
            self.share_within_dominating.map(|s| s.to_string()).unwrap_or_default(),
        ])?;
        out.flush().map_err(|e| Error::io("csv output", e))?;
        Ok(())
    }

    pub fn write_records_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["replication", "selected", "loss", "within_dominating", "support"])?;
        for r in &self.records {
            out.write_record([
                r.replication.to_string(),
                r.selected.to_string(),
                r.loss.to_string(),
                r.within_dominating.map(|b| b.to_string()).unwrap_or_default(),
                r.support.join(";"),
            ])?;
        }
        out.flush().map_err(|e| Error::io("csv output", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let (ma, sa) = mean_sd(a);
        let (mb, sb) = mean_sd(b);
        let n = a.len() as f64;
        a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0) / (sa * sb)
    }

    #[test]
    fn same_seed_same_panel() {
        let d = McDesign::experiment_two(50, 10, 1, 42);
        assert_eq!(generate(&d, 3).unwrap(), generate(&d, 3).unwrap());
        assert_ne!(generate(&d, 3).unwrap(), generate(&d, 4).unwrap());
    }

    #[test]
    fn block_means_within_clt_band() {
        let t = 4000;
        let d = McDesign::experiment_two(t, 10, 1, 7);
        let p = generate(&d, 0).unwrap();
        let (m, _) = mean_sd(p.column(0));
        assert!((m - 0.3).abs() < 4.0 * 0.15 / (t as f64).sqrt());
        let (m, s) = mean_sd(p.column(7));
        assert!((m - 0.15).abs() < 4.0 * 0.1 / (t as f64).sqrt());
        assert!((s - 0.1).abs() < 0.01);
    }

    #[test]
    fn independent_design_is_uncorrelated() {
        let t = 3000;
        let d = McDesign::experiment_one(4, t, 2, 1, 9);
        let p = generate(&d, 0).unwrap();
        for i in 0..4 {
            for j in 0..i {
                assert!(corr(p.column(i), p.column(j)).abs() < 4.0 / (t as f64).sqrt());
            }
        }
    }

    #[test]
    fn design_validation() {
        let mut d = McDesign::experiment_two(100, 10, 1, 1);
        d.n_assets = 20;
        assert!(d.validate().is_err());
        let mut d = McDesign::experiment_one(5, 100, 2, 1, 1);
        d.sd = 0.0;
        assert!(generate(&d, 0).is_err());
    }

    #[test]
    fn small_experiment_reports() {
        let d = McDesign {
            n1: 6,
            n2: 3,
            ..McDesign::experiment_one(6, 40, 2, 3, 5)
        };
        let r = run_experiment(&d).unwrap();
        assert_eq!(r.records.len(), 3);
        assert!(r.records.iter().all(|x| x.selected <= 2 && x.loss >= 0.0));
        assert!(r.share_within_dominating.is_none());
        let mut buf = Vec::new();
        r.write_summary_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
    }
}
