//! Return and factor panels.
//!
//! A [`ReturnPanel`] is a dated `T × p` matrix of simple returns. Values are
//! stored column-major so that a single asset's history is one contiguous
//! slice, which is the access pattern of every solver in this crate.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ReturnPanel {
    dates: Vec<NaiveDate>,
    assets: Vec<String>,
    /// Column-major, `values[i * T + t]`; unobserved cells hold NaN.
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl PartialEq for ReturnPanel {
    fn eq(&self, other: &Self) -> bool {
        self.dates == other.dates
            && self.assets == other.assets
            && self.mask == other.mask
            && self
                .values
                .iter()
                .zip(&other.values)
                .zip(&self.mask)
                .all(|((a, b), m)| !m || a == b)
    }
}

/// Smallest and largest observed return of a panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportBounds {
    pub lower: f64,
    pub upper: f64,
}

impl SupportBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !lower.is_finite() || !upper.is_finite() || lower > upper {
            return Err(Error::Validation(format!(
                "support bounds must be finite with lower <= upper, got ({lower}, {upper})"
            )));
        }
        Ok(Self { lower, upper })
    }
}

/// Ordinal month index used for window arithmetic.
pub fn month_index(date: NaiveDate) -> i64 {
    date.year() as i64 * 12 + date.month0() as i64
}

/// Parses `YYYY-MM-DD` or `YYYY-MM` (first of month).
pub fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(&format!("{s}-01"), "%Y-%m-%d"))
        .ok()
}

impl ReturnPanel {
    /// Builds a panel from per-asset columns; `None` marks a missing cell.
    pub fn new(
        dates: Vec<NaiveDate>,
        assets: Vec<String>,
        columns: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        let t = dates.len();
        if columns.len() != assets.len() {
            return Err(Error::Validation(format!(
                "{} asset names but {} columns",
                assets.len(),
                columns.len()
            )));
        }
        let mut values = Vec::with_capacity(t * assets.len());
        let mut mask = Vec::with_capacity(t * assets.len());
        for (i, col) in columns.iter().enumerate() {
            if col.len() != t {
                return Err(Error::Validation(format!(
                    "column {} has {} rows, expected {t}",
                    assets[i],
                    col.len()
                )));
            }
            for cell in col {
                match cell {
                    Some(v) => {
                        values.push(*v);
                        mask.push(true);
                    }
                    None => {
                        values.push(f64::NAN);
                        mask.push(false);
                    }
                }
            }
        }
        let panel = Self {
            dates,
            assets,
            values,
            mask,
        };
        panel.validate()?;
        Ok(panel)
    }

    /// Fully observed panel from complete columns.
    pub fn from_columns(
        dates: Vec<NaiveDate>,
        assets: Vec<String>,
        columns: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let cols = columns
            .into_iter()
            .map(|c| c.into_iter().map(Some).collect())
            .collect();
        Self::new(dates, assets, cols)
    }

    /// Fully observed panel with synthetic monthly dates starting 2000-01 and
    /// asset names `A1..Ap`. Convenient for simulated data.
    pub fn synthetic(columns: Vec<Vec<f64>>) -> Result<Self> {
        let t = columns.first().map_or(0, Vec::len);
        let names = (1..=columns.len()).map(|i| format!("A{i}")).collect();
        Self::from_columns(monthly_dates(2000, 1, t), names, columns)
    }

    fn validate(&self) -> Result<()> {
        for w in self.dates.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Validation(format!(
                    "dates must be strictly increasing ({} followed by {})",
                    w[0], w[1]
                )));
            }
        }
        let mut seen = HashSet::new();
        for a in &self.assets {
            if !seen.insert(a.as_str()) {
                return Err(Error::Validation(format!("duplicate asset identifier {a}")));
            }
        }
        for (k, (&v, &m)) in self.values.iter().zip(&self.mask).enumerate() {
            if m && !v.is_finite() {
                let t = self.dates.len().max(1);
                return Err(Error::Validation(format!(
                    "non-finite value for asset {} at row {}",
                    self.assets[k / t],
                    k % t
                )));
            }
        }
        Ok(())
    }

    pub fn n_periods(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn asset_index(&self, name: &str) -> Option<usize> {
        self.assets.iter().position(|a| a == name)
    }

    /// History of asset `i`; unobserved cells are NaN.
    pub fn column(&self, i: usize) -> &[f64] {
        let t = self.n_periods();
        &self.values[i * t..(i + 1) * t]
    }

    pub fn column_by_name(&self, name: &str) -> Option<&[f64]> {
        self.asset_index(name).map(|i| self.column(i))
    }

    pub fn value(&self, t: usize, i: usize) -> f64 {
        self.values[i * self.n_periods() + t]
    }

    pub fn is_observed(&self, t: usize, i: usize) -> bool {
        self.mask[i * self.n_periods() + t]
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|m| !**m).count()
    }

    pub fn is_fully_observed(&self) -> bool {
        self.mask.iter().all(|m| *m)
    }

    pub(crate) fn require_observed(&self) -> Result<()> {
        if self.is_fully_observed() {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "panel has {} unobserved cells; filter it first",
                self.masked_count()
            )))
        }
    }

    /// Row `t` restricted to `assets`, written into `out`.
    pub fn row_into(&self, t: usize, assets: &[usize], out: &mut Vec<f64>) {
        out.clear();
        out.extend(assets.iter().map(|&i| self.value(t, i)));
    }

    /// Portfolio return series `Σ_i w_i X_t^(i)` for sparse weights.
    pub fn portfolio_returns(&self, assets: &[usize], weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_periods()];
        for (&i, &w) in assets.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            for (o, x) in out.iter_mut().zip(self.column(i)) {
                *o += w * x;
            }
        }
        out
    }

    /// Sub-panel of rows `start..start + len`, all assets kept.
    pub fn rows(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.n_periods() {
            return Err(Error::Range(format!(
                "rows {start}..{} outside panel of {} periods",
                start + len,
                self.n_periods()
            )));
        }
        let t = self.n_periods();
        let mut values = Vec::with_capacity(len * self.n_assets());
        let mut mask = Vec::with_capacity(len * self.n_assets());
        for i in 0..self.n_assets() {
            values.extend_from_slice(&self.values[i * t + start..i * t + start + len]);
            mask.extend_from_slice(&self.mask[i * t + start..i * t + start + len]);
        }
        Ok(Self {
            dates: self.dates[start..start + len].to_vec(),
            assets: self.assets.clone(),
            values,
            mask,
        })
    }

    /// Sub-panel keeping only `assets`, in the given order.
    pub fn select_assets(&self, assets: &[usize]) -> Self {
        let t = self.n_periods();
        let mut values = Vec::with_capacity(t * assets.len());
        let mut mask = Vec::with_capacity(t * assets.len());
        for &i in assets {
            values.extend_from_slice(self.column(i));
            mask.extend_from_slice(&self.mask[i * t..(i + 1) * t]);
        }
        Self {
            dates: self.dates.clone(),
            assets: assets.iter().map(|&i| self.assets[i].clone()).collect(),
            values,
            mask,
        }
    }

    /// Index of the first date on or after `date`.
    pub fn date_position(&self, date: NaiveDate) -> Option<usize> {
        self.dates.iter().position(|d| *d >= date)
    }

    /// Rows `start..start+len` with every asset that has a missing cell in
    /// that range dropped.
    pub fn window_rows(&self, start: usize, len: usize) -> Result<Self> {
        let sub = self.rows(start, len)?;
        let keep: Vec<usize> = (0..sub.n_assets())
            .filter(|&i| (0..len).all(|t| sub.is_observed(t, i)))
            .collect();
        if keep.is_empty() {
            return Err(Error::EmptyUniverse(Some(sub.dates[0].to_string())));
        }
        Ok(sub.select_assets(&keep))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["date".to_string()];
        header.extend(self.assets.iter().cloned());
        w.write_record(&header)?;
        for t in 0..self.n_periods() {
            let mut rec = vec![self.dates[t].format("%Y-%m-%d").to_string()];
            for i in 0..self.n_assets() {
                rec.push(if self.is_observed(t, i) {
                    format!("{}", self.value(t, i))
                } else {
                    String::new()
                });
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Monthly first-of-month dates.
pub fn monthly_dates(year: i32, month: u32, n: usize) -> Vec<NaiveDate> {
    (0..n)
        .map(|k| {
            let m0 = (month - 1) as usize + k;
            NaiveDate::from_ymd_opt(year + (m0 / 12) as i32, (m0 % 12) as u32 + 1, 1)
                .expect("valid month")
        })
        .collect()
}

/// Reads a panel from CSV: header `date,ASSET1,...`, ISO dates, empty = missing.
pub fn read_panel<R: Read>(reader: R) -> Result<ReturnPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(Error::Parse {
            row: 1,
            column: 1,
            message: "header must contain a date column and at least one asset".into(),
        });
    }
    let assets: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut dates = Vec::new();
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); assets.len()];
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 2;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row,
                column: rec.len(),
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let date = parse_date(&rec[0]).ok_or_else(|| Error::Parse {
            row,
            column: 1,
            message: format!("malformed date {:?}", &rec[0]),
        })?;
        dates.push(date);
        for (i, cell) in rec.iter().skip(1).enumerate() {
            let v = if cell.is_empty() {
                None
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    row,
                    column: i + 2,
                    message: format!("non-numeric value {cell:?}"),
                })?;
                Some(v)
            };
            columns[i].push(v);
        }
    }
    ReturnPanel::new(dates, assets, columns)
}

pub fn load_panel(path: impl AsRef<Path>) -> Result<ReturnPanel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    read_panel(std::io::BufReader::new(file))
}

/// Training window starting at the first date on or after `start`, with every
/// asset that has a missing cell inside the window excluded.
pub fn window_and_filter(panel: &ReturnPanel, start: NaiveDate, length: usize) -> Result<ReturnPanel> {
    let s = panel.date_position(start).ok_or_else(|| {
        Error::Range(format!("start {start} is after the last panel date"))
    })?;
    if length == 0 || s + length > panel.n_periods() {
        return Err(Error::Range(format!(
            "window of {length} periods from {start} exceeds the panel ({} periods available)",
            panel.n_periods() - s
        )));
    }
    panel.window_rows(s, length)
}

pub fn support_bounds(panel: &ReturnPanel) -> Result<SupportBounds> {
    panel.require_observed()?;
    if panel.values.is_empty() {
        return Err(Error::Validation("empty panel has no support".into()));
    }
    let (lo, hi) = panel
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    SupportBounds::new(lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(csv: &str) -> Result<ReturnPanel> {
        read_panel(csv.as_bytes())
    }

    #[test]
    fn parses_missing_cell() {
        let p = panel("date,A,B\n2000-01-31,0.01,0.02\n2000-02-29,,0.03\n2000-03-31,0.0129,-0.01\n")
            .unwrap();
        assert_eq!(p.n_periods(), 3);
        assert_eq!(p.n_assets(), 2);
        assert_eq!(p.masked_count(), 1);
        assert!(!p.is_observed(1, 0));
        assert_eq!(p.value(2, 0), 0.0129);
    }

    #[test]
    fn rejects_unsorted_dates() {
        let err = panel("date,A\n2000-02-01,0.1\n2000-01-01,0.2\n").unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn rejects_duplicate_assets() {
        let err = panel("date,A,A\n2000-01-01,0.1,0.2\n").unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn parse_errors_name_position() {
        match panel("date,A,B\n2000-01-01,0.1,x\n").unwrap_err() {
            Error::Parse { row, column, .. } => assert_eq!((row, column), (2, 3)),
            e => panic!("unexpected {e}"),
        }
        match panel("date,A\nnot-a-date,0.1\n").unwrap_err() {
            Error::Parse { row, column, .. } => assert_eq!((row, column), (2, 1)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn window_drops_assets_with_gaps() {
        let p = panel("date,A,B\n2000-01-01,0.1,0.2\n2000-02-01,,0.1\n2000-03-01,0.3,0.1\n").unwrap();
        let w = window_and_filter(&p, p.dates()[0], 3).unwrap();
        assert_eq!(w.assets(), &["B".to_string()]);
        assert!(w.is_fully_observed());
        // idempotent on its own output
        let w2 = window_and_filter(&w, w.dates()[0], 3).unwrap();
        assert_eq!(w, w2);
        // window avoiding the gap keeps both
        let w3 = window_and_filter(&p, p.dates()[2], 1).unwrap();
        assert_eq!(w3.n_assets(), 2);
    }

    #[test]
    fn window_range_errors() {
        let p = panel("date,A\n2000-01-01,0.1\n2000-02-01,0.2\n").unwrap();
        assert!(matches!(
            window_and_filter(&p, p.dates()[0], 3),
            Err(Error::Range(_))
        ));
        let q = panel("date,A\n2000-01-01,\n2000-02-01,0.2\n").unwrap();
        assert!(matches!(
            window_and_filter(&q, q.dates()[0], 2),
            Err(Error::EmptyUniverse(_))
        ));
    }

    #[test]
    fn bounds_examples() {
        let p = ReturnPanel::synthetic(vec![vec![-0.1, 0.0], vec![0.2, 0.0]]).unwrap();
        let b = support_bounds(&p).unwrap();
        assert_eq!((b.lower, b.upper), (-0.1, 0.2));
        let c = ReturnPanel::synthetic(vec![vec![0.05; 3]]).unwrap();
        let b = support_bounds(&c).unwrap();
        assert_eq!((b.lower, b.upper), (0.05, 0.05));
        let s = ReturnPanel::synthetic(vec![vec![0.0]]).unwrap();
        assert_eq!(support_bounds(&s).unwrap().upper, 0.0);
        let e = ReturnPanel::synthetic(vec![]).unwrap();
        assert!(support_bounds(&e).is_err());
    }

    #[test]
    fn csv_round_trip_keeps_mask() {
        let p = panel("date,A,B\n2000-01-01,0.1,\n2000-02-01,-0.25,0.5\n").unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert_eq!(read_panel(buf.as_slice()).unwrap(), p);
    }

    #[test]
    fn month_dates_accepted() {
        let p = panel("date,A\n2001-12,0.1\n2002-01,0.2\n").unwrap();
        assert_eq!(month_index(p.dates()[1]) - month_index(p.dates()[0]), 1);
    }
}
