//! Weekly return panels: CSV ingestion, date alignment, coverage filtering
//! and excess-return construction.
//!
//! Returns are simple weekly returns stored as decimals. Unobserved cells are
//! tracked by a boolean mask and hold `NaN` in the value matrix, so any code
//! that forgets to consult the mask fails loudly instead of silently using a
//! placeholder.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::path::Path;

use chrono::NaiveDate;
use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy;

/// Unit convention of a returns file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    #[default]
    Decimal,
    /// Values are in percent and are divided by 100 at ingestion.
    Percent,
}

impl Units {
    fn scale(self) -> f64 {
        match self {
            Units::Decimal => 1.0,
            Units::Percent => 0.01,
        }
    }
}

impl std::str::FromStr for Units {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "decimal" => Ok(Units::Decimal),
            "percent" => Ok(Units::Percent),
            other => Err(Error::InvalidConfig(format!(
                "units must be `decimal` or `percent`, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PanelSchema {
    pub date_column: String,
    pub units: Units,
}

impl Default for PanelSchema {
    fn default() -> Self {
        PanelSchema {
            date_column: "date".to_string(),
            units: Units::Decimal,
        }
    }
}

/// Date-indexed matrix of weekly returns with a missingness mask.
///
/// Equality compares dates, names, mask and the observed values only.
#[derive(Debug, Clone)]
pub struct ReturnsPanel {
    dates: Vec<NaiveDate>,
    names: Vec<String>,
    values: Array2<f64>,
    mask: Array2<bool>,
}

impl PartialEq for ReturnsPanel {
    fn eq(&self, other: &Self) -> bool {
        self.dates == other.dates
            && self.names == other.names
            && self.mask == other.mask
            && self
                .values
                .iter()
                .zip(other.values.iter())
                .zip(self.mask.iter())
                .all(|((a, b), &m)| !m || a == b)
    }
}

impl ReturnsPanel {
    /// Builds a panel, checking every invariant. Masked-out cells are reset
    /// to `NaN`.
    pub fn new(
        dates: Vec<NaiveDate>,
        names: Vec<String>,
        mut values: Array2<f64>,
        mask: Array2<bool>,
    ) -> Result<Self> {
        let shape = (dates.len(), names.len());
        if values.dim() != shape || mask.dim() != shape {
            return Err(Error::Schema(format!(
                "panel shape mismatch: {} dates x {} names, values {:?}, mask {:?}",
                shape.0,
                shape.1,
                values.dim(),
                mask.dim()
            )));
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Schema(format!(
                "dates must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{n}`")));
            }
        }
        for ((t, j), v) in values.indexed_iter_mut() {
            if mask[[t, j]] {
                if !v.is_finite() {
                    return Err(Error::Schema(format!(
                        "non-finite observed value in column `{}` on {}",
                        names[j], dates[t]
                    )));
                }
            } else {
                *v = f64::NAN;
            }
        }
        Ok(ReturnsPanel {
            dates,
            names,
            values,
            mask,
        })
    }

    /// Builds a fully-observed panel from a value matrix.
    pub fn from_values(dates: Vec<NaiveDate>, names: Vec<String>, values: Array2<f64>) -> Result<Self> {
        let mask = values.mapv(|v| v.is_finite());
        Self::new(dates, names, values, mask)
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_columns(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.values.column(j)
    }

    pub fn column_mask(&self, j: usize) -> ArrayView1<'_, bool> {
        self.mask.column(j)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn observed_count(&self, j: usize) -> usize {
        self.mask.column(j).iter().filter(|&&m| m).count()
    }

    pub fn is_fully_observed(&self, j: usize) -> bool {
        self.mask.column(j).iter().all(|&m| m)
    }

    /// Panel restricted to the given column indices, in the given order.
    pub fn select_columns(&self, idx: &[usize]) -> ReturnsPanel {
        ReturnsPanel {
            dates: self.dates.clone(),
            names: idx.iter().map(|&j| self.names[j].clone()).collect(),
            values: self.values.select(Axis(1), idx),
            mask: self.mask.select(Axis(1), idx),
        }
    }

    /// Panel restricted to the given row indices (which must be increasing).
    pub fn select_rows(&self, idx: &[usize]) -> ReturnsPanel {
        ReturnsPanel {
            dates: idx.iter().map(|&t| self.dates[t]).collect(),
            names: self.names.clone(),
            values: self.values.select(Axis(0), idx),
            mask: self.mask.select(Axis(0), idx),
        }
    }

    /// Rows whose dates fall in `[start, end]`.
    pub fn window(&self, start: NaiveDate, end: NaiveDate) -> ReturnsPanel {
        let idx: Vec<usize> = (0..self.dates.len())
            .filter(|&t| self.dates[t] >= start && self.dates[t] <= end)
            .collect();
        self.select_rows(&idx)
    }

    /// Restricts to `dates`, each of which must be present.
    pub fn restrict_to(&self, dates: &[NaiveDate]) -> Result<ReturnsPanel> {
        let pos: BTreeMap<NaiveDate, usize> =
            self.dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        let missing: Vec<NaiveDate> = dates.iter().filter(|d| !pos.contains_key(d)).copied().collect();
        if !missing.is_empty() {
            return Err(Error::Alignment { missing });
        }
        let idx: Vec<usize> = dates.iter().map(|d| pos[d]).collect();
        Ok(self.select_rows(&idx))
    }

    /// Applies `f` to every observed value.
    pub fn map_observed(&self, mut f: impl FnMut(f64) -> f64) -> ReturnsPanel {
        let mut out = self.clone();
        for (v, &m) in out.values.iter_mut().zip(self.mask.iter()) {
            if m {
                *v = f(*v);
            }
        }
        out
    }

    /// Horizontally joins panels sharing an identical date grid.
    pub fn hstack(panels: &[&ReturnsPanel]) -> Result<ReturnsPanel> {
        let first = panels
            .first()
            .ok_or_else(|| Error::domain("hstack of zero panels"))?;
        for p in panels {
            if p.dates != first.dates {
                return Err(Error::Schema("hstack requires identical date grids".into()));
            }
        }
        let names = panels.iter().flat_map(|p| p.names.iter().cloned()).collect();
        let values = ndarray::concatenate(
            Axis(1),
            &panels.iter().map(|p| p.values.view()).collect::<Vec<_>>(),
        )
        .expect("row counts agree");
        let mask = ndarray::concatenate(
            Axis(1),
            &panels.iter().map(|p| p.mask.view()).collect::<Vec<_>>(),
        )
        .expect("row counts agree");
        ReturnsPanel::new(first.dates.clone(), names, values, mask)
    }

    /// Writes the wide CSV format read by [`load_panel`]. Unobserved cells
    /// are written empty.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["date".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (t, d) in self.dates.iter().enumerate() {
            let mut rec = vec![d.to_string()];
            for j in 0..self.names.len() {
                rec.push(if self.mask[[t, j]] {
                    format_value(self.values[[t, j]])
                } else {
                    String::new()
                });
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

pub(crate) fn format_value(v: f64) -> String {
    // Shortest representation that round-trips.
    format!("{v:?}")
}

/// Weekly risk-free returns.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskFreeSeries {
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl RiskFreeSeries {
    pub fn new(dates: Vec<NaiveDate>, values: Vec<f64>) -> Result<Self> {
        if dates.len() != values.len() {
            return Err(Error::Schema("risk-free dates and values differ in length".into()));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Schema("risk-free dates must be strictly increasing".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Schema(format!(
                "risk-free series must be fully observed; missing on {}",
                dates[i]
            )));
        }
        Ok(RiskFreeSeries { dates, values })
    }

    pub fn restrict_to(&self, dates: &[NaiveDate]) -> Result<RiskFreeSeries> {
        let pos: BTreeMap<NaiveDate, usize> =
            self.dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        let missing: Vec<NaiveDate> = dates.iter().filter(|d| !pos.contains_key(d)).copied().collect();
        if !missing.is_empty() {
            return Err(Error::Alignment { missing });
        }
        Ok(RiskFreeSeries {
            dates: dates.to_vec(),
            values: dates.iter().map(|d| self.values[pos[d]]).collect(),
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["date", "rf"])?;
        for (d, v) in self.dates.iter().zip(&self.values) {
            w.write_record([d.to_string(), format_value(*v)])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Identifiers of the five Fama-French factors, in canonical order.
pub const FF5_IDS: [&str; 5] = ["mkt_rf", "smb", "hml", "rmw", "cma"];

/// Display labels of the FF5 factors when they appear as rows of the
/// significance tables.
pub const FF5_LABELS: [&str; 5] = ["Market Return", "SMB", "HML", "RMW", "CMA"];

/// Security metadata: ticker and four-digit SIC code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecurityMeta {
    pub ticker: String,
    pub sic_code: u16,
}

impl SecurityMeta {
    pub fn new(ticker: impl Into<String>, sic_code: u16) -> Result<Self> {
        if sic_code > 9999 {
            return Err(Error::domain(format!("SIC code {sic_code} outside [0, 9999]")));
        }
        Ok(SecurityMeta {
            ticker: ticker.into(),
            sic_code,
        })
    }

    /// Two-digit SIC prefix (major group).
    pub fn class_id(&self) -> u8 {
        (self.sic_code / 100) as u8
    }
}

/// Factor metadata: ticker, ETF category and the category's class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorMeta {
    pub ticker: String,
    pub category: String,
    pub class: String,
}

impl FactorMeta {
    /// Checks the category against the shipped taxonomy.
    pub fn new(ticker: impl Into<String>, category: impl Into<String>, class: impl Into<String>) -> Result<Self> {
        let (ticker, category, class) = (ticker.into(), category.into(), class.into());
        match taxonomy::class_of_category(&category) {
            Some(c) if c == class => Ok(FactorMeta {
                ticker,
                category,
                class,
            }),
            Some(c) => Err(Error::Schema(format!(
                "factor `{ticker}`: category `{category}` belongs to class `{c}`, not `{class}`"
            ))),
            None => Err(Error::Schema(format!(
                "factor `{ticker}`: unknown category `{category}`"
            ))),
        }
    }
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn parse_date(s: &str, row: usize) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| Error::Parse {
        row,
        message: format!("bad date `{s}`: {e}"),
    })
}

fn parse_cell(s: &str, row: usize, column: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    let v: f64 = s.parse().map_err(|_| Error::Parse {
        row,
        message: format!("non-numeric value `{s}` in column `{column}`"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row,
            message: format!("non-finite value `{s}` in column `{column}`"),
        });
    }
    Ok(Some(v))
}

/// Reads a wide returns CSV: `date,<ticker1>,<ticker2>,...`.
///
/// Rows are sorted by date; empty cells become unobserved.
pub fn load_panel(path: &Path, schema: &PanelSchema) -> Result<ReturnsPanel> {
    let mut rdr = open(path)?;
    let header = rdr.headers()?.clone();
    if header.is_empty() || &header[0] != schema.date_column.as_str() {
        return Err(Error::Schema(format!(
            "{}: first column must be `{}`",
            path.display(),
            schema.date_column
        )));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut seen = HashSet::new();
    for n in &names {
        if !seen.insert(n.as_str()) {
            return Err(Error::Schema(format!(
                "{}: duplicate ticker header `{n}`",
                path.display()
            )));
        }
    }
    let scale = schema.units.scale();
    let mut rows: Vec<(NaiveDate, Vec<Option<f64>>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        if rec.len() != names.len() + 1 {
            return Err(Error::Parse {
                row,
                message: format!("expected {} fields, found {}", names.len() + 1, rec.len()),
            });
        }
        let date = parse_date(&rec[0], row)?;
        let cells = names
            .iter()
            .enumerate()
            .map(|(j, n)| parse_cell(&rec[j + 1], row, n).map(|v| v.map(|x| x * scale)))
            .collect::<Result<Vec<_>>>()?;
        rows.push((date, cells));
    }
    rows.sort_by_key(|(d, _)| *d);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Schema(format!(
            "{}: duplicate date {}",
            path.display(),
            w[0].0
        )));
    }
    let (t, k) = (rows.len(), names.len());
    let mut values = Array2::from_elem((t, k), f64::NAN);
    let mut mask = Array2::from_elem((t, k), false);
    let mut dates = Vec::with_capacity(t);
    for (r, (d, cells)) in rows.into_iter().enumerate() {
        dates.push(d);
        for (j, c) in cells.into_iter().enumerate() {
            if let Some(v) = c {
                values[[r, j]] = v;
                mask[[r, j]] = true;
            }
        }
    }
    ReturnsPanel::new(dates, names, values, mask)
}

/// Reads a `date,rf` CSV.
pub fn load_risk_free(path: &Path, units: Units) -> Result<RiskFreeSeries> {
    let panel = load_panel(path, &PanelSchema {
        date_column: "date".into(),
        units,
    })?;
    let j = panel
        .column_index("rf")
        .ok_or_else(|| Error::Schema(format!("{}: missing `rf` column", path.display())))?;
    RiskFreeSeries::new(panel.dates.clone(), panel.column(j).to_vec())
}

/// Reads a `date,mkt_rf,smb,hml,rmw,cma,rf` CSV. Returns the five factor
/// columns (in [`FF5_IDS`] order) and the risk-free column.
pub fn load_ff5(path: &Path, units: Units) -> Result<(ReturnsPanel, RiskFreeSeries)> {
    let panel = load_panel(path, &PanelSchema {
        date_column: "date".into(),
        units,
    })?;
    let mut idx = Vec::with_capacity(5);
    for id in FF5_IDS {
        idx.push(panel.column_index(id).ok_or_else(|| {
            Error::Schema(format!("{}: missing FF5 column `{id}`", path.display()))
        })?);
    }
    let rf_j = panel
        .column_index("rf")
        .ok_or_else(|| Error::Schema(format!("{}: missing `rf` column", path.display())))?;
    let rf = RiskFreeSeries::new(panel.dates.clone(), panel.column(rf_j).to_vec())?;
    Ok((panel.select_columns(&idx), rf))
}

/// Writes an FF5 CSV in decimal units.
pub fn write_ff5_csv(ff5: &ReturnsPanel, rf: &RiskFreeSeries, path: &Path) -> Result<()> {
    let rf = rf.restrict_to(ff5.dates())?;
    let idx = FF5_IDS
        .iter()
        .map(|id| {
            ff5.column_index(id)
                .ok_or_else(|| Error::Schema(format!("missing FF5 column `{id}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["date", "mkt_rf", "smb", "hml", "rmw", "cma", "rf"])?;
    for (t, d) in ff5.dates().iter().enumerate() {
        let mut rec = vec![d.to_string()];
        for &j in &idx {
            rec.push(if ff5.mask[[t, j]] {
                format_value(ff5.values[[t, j]])
            } else {
                String::new()
            });
        }
        rec.push(format_value(rf.values[t]));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a `ticker,sic` CSV.
pub fn load_security_meta(path: &Path) -> Result<Vec<SecurityMeta>> {
    let mut rdr = open(path)?;
    let header = rdr.headers()?.clone();
    if header.len() < 2 || &header[0] != "ticker" || &header[1] != "sic" {
        return Err(Error::Schema(format!("{}: header must be `ticker,sic`", path.display())));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let sic: u16 = rec[1].parse().map_err(|_| Error::Parse {
            row: i + 2,
            message: format!("bad SIC code `{}`", &rec[1]),
        })?;
        out.push(SecurityMeta::new(&rec[0], sic)?);
    }
    Ok(out)
}

/// Reads a `ticker,category,class` CSV, validating each row against the
/// ETF taxonomy.
pub fn load_factor_meta(path: &Path) -> Result<Vec<FactorMeta>> {
    let mut rdr = open(path)?;
    let header = rdr.headers()?.clone();
    if header.len() < 3 || &header[0] != "ticker" || &header[1] != "category" || &header[2] != "class" {
        return Err(Error::Schema(format!(
            "{}: header must be `ticker,category,class`",
            path.display()
        )));
    }
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            FactorMeta::new(&rec[0], &rec[1], &rec[2])
        })
        .collect()
}

pub fn write_security_meta(meta: &[SecurityMeta], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["ticker", "sic"])?;
    for m in meta {
        w.write_record([m.ticker.clone(), format!("{:04}", m.sic_code)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_factor_meta(meta: &[FactorMeta], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["ticker", "category", "class"])?;
    for m in meta {
        w.write_record([&m.ticker, &m.category, &m.class])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Keeps columns observed on strictly more than `min_frac` of the weeks.
pub fn filter_coverage(panel: &ReturnsPanel, min_frac: f64) -> Result<ReturnsPanel> {
    if !(min_frac > 0.0 && min_frac <= 1.0) {
        return Err(Error::domain(format!("min_frac must lie in (0, 1], got {min_frac}")));
    }
    let total = panel.n_dates();
    let keep: Vec<usize> = (0..panel.n_columns())
        .filter(|&j| total > 0 && panel.observed_count(j) as f64 > min_frac * total as f64)
        .collect();
    Ok(panel.select_columns(&keep))
}

/// Subtracts the risk-free rate from every observed cell. `rf` must cover
/// every panel date.
pub fn excess_returns(panel: &ReturnsPanel, rf: &RiskFreeSeries) -> Result<ReturnsPanel> {
    let rf = rf.restrict_to(panel.dates())?;
    let mut out = panel.clone();
    for (t, mut row) in out.values.axis_iter_mut(Axis(0)).enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            if panel.mask[[t, j]] {
                *v -= rf.values[t];
            }
        }
    }
    Ok(out)
}

/// Restricts every panel to the intersection of their date grids.
pub fn align(panels: &[ReturnsPanel]) -> Result<Vec<ReturnsPanel>> {
    let dates = common_dates(panels.iter().map(|p| p.dates()))?;
    panels.iter().map(|p| p.restrict_to(&dates)).collect()
}

/// Sorted intersection of several date grids.
pub fn common_dates<'a>(grids: impl IntoIterator<Item = &'a [NaiveDate]>) -> Result<Vec<NaiveDate>> {
    let mut iter = grids.into_iter();
    let mut acc: BTreeSet<NaiveDate> = iter
        .next()
        .ok_or_else(|| Error::domain("align needs at least one panel"))?
        .iter()
        .copied()
        .collect();
    for g in iter {
        let other: BTreeSet<NaiveDate> = g.iter().copied().collect();
        acc = acc.intersection(&other).copied().collect();
    }
    if acc.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    Ok(acc.into_iter().collect())
}
