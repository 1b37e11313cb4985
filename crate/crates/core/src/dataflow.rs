//! Monthly predictor panels: CSV ingestion, feature cases and forecast targets.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// The fourteen monthly predictors, in canonical column order.
pub const PREDICTORS: [&str; 14] = [
    "dp", "dy", "ep", "de", "svar", "bm", "ntis", "tbl", "ltr", "tms", "dfy", "dfr", "infl", "cay",
];

pub const DATE: &str = "date";
pub const SP500_LOG_RETURN: &str = "sp500_log_return";
pub const RISK_FREE: &str = "risk_free";
pub const EXCESS: &str = "excess";

/// A calendar month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::Schema(format!("month out of range: {month}")));
        }
        Ok(YearMonth { year, month })
    }

    /// Months since year 0.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn from_ordinal(ord: i64) -> Self {
        YearMonth {
            year: ord.div_euclid(12) as i32,
            month: (ord.rem_euclid(12) + 1) as u32,
        }
    }

    pub fn plus_months(self, n: i64) -> Self {
        Self::from_ordinal(self.ordinal() + n)
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    /// Accepts `YYYY-MM`, `YYYYMM` and `YYYY-MM-DD`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let bad = || Error::Schema(format!("unparseable date `{s}`"));
        let (y, m) = if t.len() == 6 && t.bytes().all(|b| b.is_ascii_digit()) {
            (&t[..4], &t[4..])
        } else {
            let mut parts = t.split('-');
            let y = parts.next().ok_or_else(bad)?;
            let m = parts.next().ok_or_else(bad)?;
            match parts.next() {
                None => {}
                Some(d) if d.len() == 2 && d.parse::<u32>().is_ok_and(|d| (1..=31).contains(&d)) => {}
                Some(_) => return Err(bad()),
            }
            if parts.next().is_some() || y.len() != 4 || m.len() != 2 {
                return Err(bad());
            }
            (y, m)
        };
        let year = y.parse::<i32>().map_err(|_| bad())?;
        let month = m.parse::<u32>().map_err(|_| bad())?;
        YearMonth::new(year, month).map_err(|_| bad())
    }
}

impl Serialize for YearMonth {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Canonical column name to CSV header. Unlisted columns use their canonical
/// name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ColumnMap(pub BTreeMap<String, String>);

impl ColumnMap {
    pub fn header<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.0.get(canonical).map(String::as_str).unwrap_or(canonical)
    }

    pub fn validate(&self) -> Result<()> {
        for key in self.0.keys() {
            let known = key == DATE
                || key == SP500_LOG_RETURN
                || key == RISK_FREE
                || key == EXCESS
                || PREDICTORS.contains(&key.as_str());
            if !known {
                return Err(Error::Config(format!("column_map: unknown column `{key}`")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorPanel {
    pub dates: Vec<YearMonth>,
    /// `T × 14`, columns in [`PREDICTORS`] order.
    pub predictors: Array2<f64>,
    pub sp500_log_return: Array1<f64>,
    /// Monthly rate.
    pub risk_free: Array1<f64>,
    /// Excess log return of the month.
    pub excess: Array1<f64>,
}

impl PredictorPanel {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Checks shapes, monthly spacing and finiteness.
    pub fn validate(&self) -> Result<()> {
        let t = self.dates.len();
        if self.predictors.dim() != (t, PREDICTORS.len())
            || self.sp500_log_return.len() != t
            || self.risk_free.len() != t
            || self.excess.len() != t
        {
            return Err(Error::Schema("panel columns have inconsistent lengths".into()));
        }
        for w in self.dates.windows(2) {
            if w[1].ordinal() != w[0].ordinal() + 1 {
                return Err(Error::Schema(format!("dates are not consecutive months: {} then {}", w[0], w[1])));
            }
        }
        let finite = self
            .predictors
            .iter()
            .chain(self.sp500_log_return.iter())
            .chain(self.risk_free.iter())
            .chain(self.excess.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Schema("panel contains missing or non-finite values".into()));
        }
        Ok(())
    }

    /// Rows `range` as a new panel.
    pub fn slice_rows(&self, start: usize, end: usize) -> PredictorPanel {
        PredictorPanel {
            dates: self.dates[start..end].to_vec(),
            predictors: self.predictors.slice(s![start..end, ..]).to_owned(),
            sp500_log_return: self.sp500_log_return.slice(s![start..end]).to_owned(),
            risk_free: self.risk_free.slice(s![start..end]).to_owned(),
            excess: self.excess.slice(s![start..end]).to_owned(),
        }
    }
}

fn parse_value(raw: &str, column: &str, line: u64) -> Result<f64> {
    let t = raw.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    t.parse::<f64>()
        .map_err(|_| Error::Schema(format!("line {line}: column `{column}` has non-numeric value `{t}`")))
}

/// Reads a monthly panel. Rows are sorted by date; leading months with any
/// missing value are dropped; a missing value after that is an error, as are
/// duplicate or skipped months. The excess return is read from the `excess`
/// column when present and computed as `sp500_log_return − risk_free`
/// otherwise.
pub fn load_csv(path: impl AsRef<Path>, map: &ColumnMap) -> Result<PredictorPanel> {
    let path = path.as_ref();
    map.validate()?;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers()?.clone();
    let find = |canonical: &str| headers.iter().position(|h| h == map.header(canonical));
    let require = |canonical: &str| {
        find(canonical).ok_or_else(|| {
            Error::Schema(format!(
                "{}: missing column `{}`",
                path.display(),
                map.header(canonical)
            ))
        })
    };
    let date_col = require(DATE)?;
    let pred_cols = PREDICTORS
        .iter()
        .map(|c| require(c))
        .collect::<Result<Vec<_>>>()?;
    let ret_col = require(SP500_LOG_RETURN)?;
    let rf_col = require(RISK_FREE)?;
    let excess_col = if map.0.contains_key(EXCESS) {
        Some(require(EXCESS)?)
    } else {
        find(EXCESS)
    };

    struct Row {
        date: YearMonth,
        values: Vec<f64>,
        ret: f64,
        rf: f64,
        excess: f64,
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("");
        let date: YearMonth = field(date_col)
            .parse()
            .map_err(|_| Error::Schema(format!("line {line}: unparseable date `{}`", field(date_col))))?;
        let values = pred_cols
            .iter()
            .zip(PREDICTORS)
            .map(|(&i, name)| parse_value(field(i), name, line))
            .collect::<Result<Vec<_>>>()?;
        let ret = parse_value(field(ret_col), SP500_LOG_RETURN, line)?;
        let rf = parse_value(field(rf_col), RISK_FREE, line)?;
        let excess = match excess_col {
            Some(i) => parse_value(field(i), EXCESS, line)?,
            None => ret - rf,
        };
        rows.push(Row {
            date,
            values,
            ret,
            rf,
            excess,
        });
    }
    rows.sort_by_key(|r| r.date);
    for w in rows.windows(2) {
        if w[0].date == w[1].date {
            return Err(Error::Schema(format!("duplicate month {}", w[0].date)));
        }
    }
    let complete = |r: &Row| r.values.iter().chain([&r.ret, &r.rf, &r.excess]).all(|v| v.is_finite());
    let first = rows.iter().position(complete).unwrap_or(rows.len());
    let rows = &rows[first..];
    if let Some(r) = rows.iter().find(|r| !complete(r)) {
        return Err(Error::Schema(format!("missing value in month {} after the first complete month", r.date)));
    }
    if rows.is_empty() {
        return Err(Error::Schema(format!("{}: no complete rows", path.display())));
    }
    let t = rows.len();
    let panel = PredictorPanel {
        dates: rows.iter().map(|r| r.date).collect(),
        predictors: Array2::from_shape_fn((t, PREDICTORS.len()), |(i, j)| rows[i].values[j]),
        sp500_log_return: rows.iter().map(|r| r.ret).collect(),
        risk_free: rows.iter().map(|r| r.rf).collect(),
        excess: rows.iter().map(|r| r.excess).collect(),
    };
    panel.validate()?;
    Ok(panel)
}

/// Writes the panel with canonical headers; [`load_csv`] reads it back exactly.
pub fn write_csv(panel: &PredictorPanel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![DATE];
    header.extend(PREDICTORS);
    header.extend([SP500_LOG_RETURN, RISK_FREE, EXCESS]);
    w.write_record(&header)?;
    for (i, date) in panel.dates.iter().enumerate() {
        let mut rec = vec![date.to_string()];
        rec.extend(panel.predictors.row(i).iter().map(|v| v.to_string()));
        rec.push(panel.sp500_log_return[i].to_string());
        rec.push(panel.risk_free[i].to_string());
        rec.push(panel.excess[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureCase {
    /// `X_t`.
    Base,
    /// `(X_t, X_t²)`.
    WithSquares,
    /// `(X_t, 1{R_{t−1} > 0} X_t)`.
    WithAsymmetry,
    /// `(X_t, X_t², 1{R_{t−1} > 0} X_t)`.
    All,
}

impl FeatureCase {
    pub const ALL: [FeatureCase; 4] = [
        FeatureCase::Base,
        FeatureCase::WithSquares,
        FeatureCase::WithAsymmetry,
        FeatureCase::All,
    ];

    pub fn width(self) -> usize {
        match self {
            FeatureCase::Base => 14,
            FeatureCase::WithSquares | FeatureCase::WithAsymmetry => 28,
            FeatureCase::All => 42,
        }
    }

    /// `Case 1` to `Case 4`.
    pub fn label(self) -> &'static str {
        match self {
            FeatureCase::Base => "Case 1",
            FeatureCase::WithSquares => "Case 2",
            FeatureCase::WithAsymmetry => "Case 3",
            FeatureCase::All => "Case 4",
        }
    }

    fn uses_lag(self) -> bool {
        matches!(self, FeatureCase::WithAsymmetry | FeatureCase::All)
    }
}

impl fmt::Display for FeatureCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    /// `T × m`, one row per panel month.
    pub x: Array2<f64>,
    pub names: Vec<String>,
    /// First row whose features are fully defined (1 when the lagged return
    /// indicator is used, since month 0 has no lag).
    pub first_valid: usize,
}

pub fn build_features(panel: &PredictorPanel, case: FeatureCase) -> FeatureMatrix {
    let x = &panel.predictors;
    let mut blocks = vec![x.clone()];
    let mut names: Vec<String> = PREDICTORS.iter().map(|s| s.to_string()).collect();
    if matches!(case, FeatureCase::WithSquares | FeatureCase::All) {
        blocks.push(x.mapv(|v| v * v));
        names.extend(PREDICTORS.iter().map(|s| format!("{s}^2")));
    }
    if case.uses_lag() {
        let mut inter = Array2::zeros(x.dim());
        for t in 1..x.nrows() {
            if panel.excess[t - 1] > 0.0 {
                inter.row_mut(t).assign(&x.row(t));
            }
        }
        blocks.push(inter);
        names.extend(PREDICTORS.iter().map(|s| format!("{s}*up")));
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    FeatureMatrix {
        x: concatenate(Axis(1), &views).expect("blocks share row count"),
        names,
        first_valid: usize::from(case.uses_lag()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TargetKind {
    ExcessLogReturn,
    CrashLabel {
        #[serde(default = "default_crash_threshold")]
        threshold: f64,
    },
}

fn default_crash_threshold() -> f64 {
    -0.10
}

impl Default for TargetKind {
    fn default() -> Self {
        TargetKind::ExcessLogReturn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub horizon: usize,
    #[serde(default)]
    pub kind: TargetKind,
}

impl TargetSpec {
    pub fn excess(horizon: usize) -> Self {
        TargetSpec {
            horizon,
            kind: TargetKind::ExcessLogReturn,
        }
    }

    pub fn crash(horizon: usize) -> Self {
        TargetSpec {
            horizon,
            kind: TargetKind::CrashLabel {
                threshold: default_crash_threshold(),
            },
        }
    }
}

/// `y[t]` is the sum of excess log returns over months `t+1 ..= t+h` (or its
/// crash indicator), for `t` in `0 .. T − h`.
pub fn build_targets(panel: &PredictorPanel, spec: TargetSpec) -> Result<Array1<f64>> {
    let h = spec.horizon;
    if h == 0 {
        return Err(Error::invalid("horizon must be at least one month"));
    }
    let t = panel.len();
    if t < h + 1 {
        return Err(Error::Schema(format!("series of {t} months is too short for horizon {h}")));
    }
    let e = &panel.excess;
    let sums = (0..t - h).map(|i| e.slice(s![i + 1..=i + h]).sum());
    Ok(match spec.kind {
        TargetKind::ExcessLogReturn => sums.collect(),
        TargetKind::CrashLabel { threshold } => sums.map(|v| if v < threshold { 1.0 } else { 0.0 }).collect(),
    })
}

/// Feature matrix with a leading date column.
pub fn write_features_csv(panel: &PredictorPanel, features: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![DATE.to_string()];
    header.extend(features.names.iter().cloned());
    w.write_record(&header)?;
    for (i, date) in panel.dates.iter().enumerate() {
        let mut rec = vec![date.to_string()];
        rec.extend(features.x.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Targets keyed by their forecast origin month.
pub fn write_targets_csv(panel: &PredictorPanel, targets: &Array1<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["origin", "target"])?;
    for (date, y) in panel.dates.iter().zip(targets.iter()) {
        w.write_record([date.to_string(), y.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> String {
        let mut h = vec![DATE];
        h.extend(PREDICTORS);
        h.extend([SP500_LOG_RETURN, RISK_FREE]);
        h.join(",")
    }

    fn line(date: &str, base: f64) -> String {
        let mut v = vec![date.to_string()];
        v.extend((0..14).map(|j| (base + j as f64).to_string()));
        v.push("0.01".into());
        v.push("0.002".into());
        v.join(",")
    }

    fn write(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let p = dir.path().join("panel.csv");
        std::fs::write(&p, body).unwrap();
        p
    }

    fn toy_panel(excess: &[f64]) -> PredictorPanel {
        let t = excess.len();
        PredictorPanel {
            dates: (0..t).map(|i| YearMonth::from_ordinal(1950 * 12 + i as i64)).collect(),
            predictors: Array2::from_shape_fn((t, 14), |(i, j)| (i * 14 + j) as f64 + 0.5),
            sp500_log_return: Array1::from(excess.to_vec()),
            risk_free: Array1::zeros(t),
            excess: Array1::from(excess.to_vec()),
        }
    }

    #[test]
    fn dates_parse_and_print() {
        for s in ["1926-12", "192612", "1926-12-31"] {
            assert_eq!(s.parse::<YearMonth>().unwrap().to_string(), "1926-12");
        }
        assert!("1926-13".parse::<YearMonth>().is_err());
        assert!("Dec 1926".parse::<YearMonth>().is_err());
        assert_eq!(YearMonth::new(1926, 12).unwrap().plus_months(1).to_string(), "1927-01");
    }

    #[test]
    fn three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{}\n{}\n{}\n{}\n", header(), line("1950-01", 1.0), line("1950-02", 2.0), line("1950-03", 3.0));
        let p = load_csv(write(&dir, &body), &ColumnMap::default()).unwrap();
        assert_eq!(p.len(), 3);
        assert!((p.excess[0] - 0.008).abs() < 1e-15);
    }

    #[test]
    fn missing_column_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let body = header().replace(",infl,", ",inflation,") + "\n" + &line("1950-01", 1.0) + "\n";
        let err = load_csv(write(&dir, &body), &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
        assert!(err.to_string().contains("`infl`"));
        let mut map = ColumnMap::default();
        map.0.insert("infl".into(), "inflation".into());
        assert_eq!(load_csv(dir.path().join("panel.csv"), &map).unwrap().len(), 1);
    }

    #[test]
    fn schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let dup = format!("{}\n{}\n{}\n", header(), line("1950-01", 1.0), line("1950-01", 2.0));
        assert!(load_csv(write(&dir, &dup), &ColumnMap::default()).is_err());
        let gap = format!("{}\n{}\n{}\n", header(), line("1950-01", 1.0), line("1950-03", 2.0));
        assert!(load_csv(write(&dir, &gap), &ColumnMap::default()).is_err());
        let bad = format!("{}\n{}\n", header(), line("19x0-01", 1.0));
        assert!(load_csv(write(&dir, &bad), &ColumnMap::default()).is_err());
        assert!(matches!(
            load_csv(dir.path().join("nope.csv"), &ColumnMap::default()),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn leading_gaps_dropped_interior_gaps_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let lead = line("1950-01", 1.0).replacen(",1,", ",,", 1);
        let body = format!("{}\n{}\n{}\n{}\n", header(), lead, line("1950-02", 2.0), line("1950-03", 3.0));
        let p = load_csv(write(&dir, &body), &ColumnMap::default()).unwrap();
        assert_eq!(p.dates[0].to_string(), "1950-02");
        let mid = line("1950-02", 2.0).replacen(",2,", ",NaN,", 1);
        let body = format!("{}\n{}\n{}\n{}\n", header(), line("1950-01", 1.0), mid, line("1950-03", 3.0));
        assert!(load_csv(write(&dir, &body), &ColumnMap::default()).is_err());
    }

    #[test]
    fn unsorted_rows_are_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{}\n{}\n{}\n", header(), line("1950-02", 2.0), line("1950-01", 1.0));
        let p = load_csv(write(&dir, &body), &ColumnMap::default()).unwrap();
        assert_eq!(p.dates[0].to_string(), "1950-01");
        assert_eq!(p.predictors[[0, 0]], 1.0);
    }

    #[test]
    fn round_trip_is_exact() {
        let mut p = toy_panel(&[0.1, -0.2, 1.0 / 3.0, 2e-17]);
        p.predictors[[1, 3]] = -std::f64::consts::PI;
        p.risk_free[2] = 0.00123456789012345;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.csv");
        write_csv(&p, &path).unwrap();
        assert_eq!(load_csv(&path, &ColumnMap::default()).unwrap(), p);
    }

    #[test]
    fn feature_widths_and_indicator() {
        let p = toy_panel(&[0.1, -0.2, 0.0, 0.3]);
        for case in FeatureCase::ALL {
            let f = build_features(&p, case);
            assert_eq!(f.x.ncols(), case.width());
            assert_eq!(f.names.len(), case.width());
        }
        let f = build_features(&p, FeatureCase::WithAsymmetry);
        assert_eq!(f.first_valid, 1);
        assert_eq!(f.x.slice(s![1, 14..]), p.predictors.row(1));
        assert!(f.x.slice(s![2, 14..]).iter().all(|&v| v == 0.0));
        assert!(f.x.slice(s![3, 14..]).iter().all(|&v| v == 0.0));
        let f = build_features(&p, FeatureCase::All);
        assert_eq!(f.x[[2, 14]], p.predictors[[2, 0]].powi(2));
    }

    #[test]
    fn targets_sum_forward_returns() {
        let p = toy_panel(&[0.0, 0.01, 0.02, 0.03, 0.04, 0.05]);
        let y1 = build_targets(&p, TargetSpec::excess(1)).unwrap();
        assert_eq!(y1.len(), 5);
        assert_eq!(y1[0], 0.01);
        let y3 = build_targets(&p, TargetSpec::excess(3)).unwrap();
        assert!((y3[0] - 0.06).abs() < 1e-15);
        for t in 0..y3.len() {
            assert!((y3[t] - (y1[t] + y1[t + 1] + y1[t + 2])).abs() < 1e-15);
        }
        assert!(build_targets(&p, TargetSpec::excess(6)).is_err());
    }

    #[test]
    fn crash_labels() {
        let p = toy_panel(&[0.0, -0.12, 0.05, -0.05]);
        let y = build_targets(&p, TargetSpec::crash(1)).unwrap();
        assert_eq!(y.to_vec(), vec![1.0, 0.0, 0.0]);
    }
}
