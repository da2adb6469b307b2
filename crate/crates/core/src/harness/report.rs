//! Measurement rows and their CSV, JSON and plain-text renderings.
//!
//! CSV columns, in order:
//!
//! | column      | meaning                                                        |
//! |-------------|----------------------------------------------------------------|
//! | `record`    | `run`, `worst`, `fit`, `bound`, `check`, `observe` or `criterion` |
//! | `experiment`| sweep or criterion name                                        |
//! | `tag`       | estimate being measured                                        |
//! | `key`       | parameter point, `name=value` pairs joined by `,`              |
//! | `seed`      | seed of the run; empty for seed-free rows                      |
//! | `lhs`       | measured quantity                                              |
//! | `rhs`       | envelope it is compared against                                |
//! | `ratio`     | `lhs / rhs`                                                    |
//! | `slope`     | fitted log-log exponent                                        |
//! | `stderr`    | standard error of the slope                                    |
//! | `target`    | expected exponent (`fit`) or upper bound (`bound`)             |
//! | `tolerance` | allowed deviation from `target`                                |
//! | `pass`      | `true`, `false`, or empty for informational rows               |
//! | `timestamp` | report creation time, seconds since the Unix epoch             |
//!
//! Floats are written as `{:.12e}`; missing values are empty cells.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

/// Version of the JSON layout; bumped on any incompatible change.
pub const SCHEMA_VERSION: u32 = 1;

pub const CSV_HEADER: [&str; 14] = [
    "record",
    "experiment",
    "tag",
    "key",
    "seed",
    "lhs",
    "rhs",
    "ratio",
    "slope",
    "stderr",
    "target",
    "tolerance",
    "pass",
    "timestamp",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Record {
    Run,
    Worst,
    /// Two-sided: `|slope - target| <= tolerance`.
    Fit,
    /// One-sided: `slope <= target + tolerance`.
    Bound,
    Check,
    /// Reported without a verdict.
    Observe,
    Criterion,
}

impl Record {
    pub fn name(self) -> &'static str {
        match self {
            Record::Run => "run",
            Record::Worst => "worst",
            Record::Fit => "fit",
            Record::Bound => "bound",
            Record::Check => "check",
            Record::Observe => "observe",
            Record::Criterion => "criterion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub record: Record,
    pub experiment: String,
    pub tag: String,
    pub key: String,
    pub seed: Option<u64>,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    pub ratio: Option<f64>,
    pub slope: Option<f64>,
    pub stderr: Option<f64>,
    pub target: Option<f64>,
    pub tolerance: Option<f64>,
    pub pass: Option<bool>,
}

impl Row {
    pub fn new(record: Record, experiment: &str, tag: &str, key: impl Into<String>) -> Row {
        Row {
            record,
            experiment: experiment.into(),
            tag: tag.into(),
            key: key.into(),
            seed: None,
            lhs: None,
            rhs: None,
            ratio: None,
            slope: None,
            stderr: None,
            target: None,
            tolerance: None,
            pass: None,
        }
    }

    pub fn seed(mut self, seed: u64) -> Row {
        self.seed = Some(seed);
        self
    }

    /// Sets `lhs`, `rhs` and their ratio (zero when `rhs` vanishes).
    pub fn measured(mut self, lhs: f64, rhs: f64) -> Row {
        self.lhs = Some(lhs);
        self.rhs = Some(rhs);
        self.ratio = Some(if rhs != 0.0 { lhs / rhs } else { 0.0 });
        self
    }

    pub fn value(mut self, lhs: f64) -> Row {
        self.lhs = Some(lhs);
        self
    }

    /// Slope row; the verdict follows from the record kind.
    pub fn fitted(mut self, slope: f64, stderr: f64, target: f64, tolerance: f64) -> Row {
        self.slope = Some(slope);
        self.stderr = Some(stderr);
        self.target = Some(target);
        self.tolerance = Some(tolerance);
        self.pass = Some(match self.record {
            Record::Bound => slope <= target + tolerance,
            _ => (slope - target).abs() <= tolerance,
        });
        self
    }

    pub fn verdict(mut self, pass: bool) -> Row {
        self.pass = Some(pass);
        self
    }

    pub fn failed(&self) -> bool {
        self.pass == Some(false)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Environment {
    pub package: String,
    pub version: String,
    pub os: String,
    pub arch: String,
    pub threads: usize,
}

impl Environment {
    pub fn current() -> Environment {
        Environment {
            package: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            threads: rayon::current_num_threads(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: u32,
    pub timestamp: u64,
    pub environment: Environment,
    pub config: Option<ExperimentConfig>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
    Human,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Format> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "human" => Ok(Format::Human),
            _ => Err(Error::Config(format!("unknown format {s:?} (csv, json, human)"))),
        }
    }
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Human => "txt",
        }
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn float(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.12e}")).unwrap_or_default()
}

impl Report {
    pub fn new(config: Option<ExperimentConfig>) -> Report {
        Report { schema: SCHEMA_VERSION, timestamp: now(), environment: Environment::current(), config, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Row) {
        self.rows.push(row);
    }

    /// Append the rows of `other` and order all rows by experiment, keeping the
    /// order of rows within an experiment.
    pub fn merge(&mut self, other: Report) {
        self.rows.extend(other.rows);
        self.rows.sort_by(|a, b| a.experiment.cmp(&b.experiment));
    }

    pub fn failures(&self) -> Vec<&Row> {
        self.rows.iter().filter(|r| r.failed()).collect()
    }

    pub fn all_pass(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        let ts = self.timestamp.to_string();
        for r in &self.rows {
            w.write_record([
                r.record.name().to_string(),
                r.experiment.clone(),
                r.tag.clone(),
                r.key.clone(),
                r.seed.map(|s| s.to_string()).unwrap_or_default(),
                float(r.lhs),
                float(r.rhs),
                float(r.ratio),
                float(r.slope),
                float(r.stderr),
                float(r.target),
                float(r.tolerance),
                r.pass.map(|p| p.to_string()).unwrap_or_default(),
                ts.clone(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Report> {
        let rep: Report = serde_json::from_str(s)?;
        if rep.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!("report schema {} (expected {SCHEMA_VERSION})", rep.schema)));
        }
        Ok(rep)
    }

    pub fn to_human(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let verdict = match r.pass {
                Some(true) => "PASS",
                Some(false) => "FAIL",
                None => "----",
            };
            let _ = write!(s, "{verdict} {:<9} {:<14} {:<22} {}", r.record.name(), r.experiment, r.tag, r.key);
            if let Some(seed) = r.seed {
                let _ = write!(s, " seed={seed}");
            }
            if let (Some(l), Some(h), Some(q)) = (r.lhs, r.rhs, r.ratio) {
                let _ = write!(s, " lhs={l:.4e} rhs={h:.4e} ratio={q:.4}");
            } else if let Some(l) = r.lhs {
                let _ = write!(s, " value={l:.4e}");
            }
            if let (Some(k), Some(t), Some(tol)) = (r.slope, r.target, r.tolerance) {
                let op = if r.record == Record::Bound { "<=" } else { "~" };
                let _ = write!(s, " slope={k:.4} {op} {t:.4} (tol {tol})");
                if let Some(e) = r.stderr {
                    let _ = write!(s, " stderr={e:.3}");
                }
            }
            s.push('\n');
        }
        let fails = self.failures().len();
        let _ = writeln!(s, "{} rows, {} failures", self.rows.len(), fails);
        s
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
            Format::Human => Ok(self.to_human()),
        }
    }

    /// Render to `path`, creating parent directories.
    pub fn write(&self, format: Format, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.render(format)?)?;
        Ok(())
    }
}

/// CSV text without the trailing timestamp column, for determinism checks.
pub fn strip_timestamps(csv_text: &str) -> String {
    csv_text
        .lines()
        .map(|l| match l.rfind(',') {
            Some(i) => &l[..i],
            None => l,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Report {
        let mut rep = Report::new(None);
        rep.push(Row::new(Record::Run, "theorem1", "bilinear-null", "lambda=1,mu=4,R=8").seed(3).measured(0.5, 2.0));
        rep.push(Row::new(Record::Fit, "theorem1", "bilinear-null", "mu-slope").fitted(0.45, 0.02, 0.5, 0.15));
        rep.push(Row::new(Record::Bound, "alpha", "induction", "frozen").fitted(0.9, 0.0, 0.1, 0.15));
        rep.push(Row::new(Record::Observe, "thickness", "decay", "rescale").value(0.3));
        rep
    }

    #[test]
    fn empty_report_is_header_only() {
        let csv = Report::new(None).to_csv().unwrap();
        assert_eq!(csv, format!("{}\n", CSV_HEADER.join(",")));
    }

    #[test]
    fn verdicts_follow_record_kind() {
        let rep = sample();
        assert_eq!(rep.rows[1].pass, Some(true));
        assert_eq!(rep.rows[2].pass, Some(false));
        assert_eq!(rep.rows[0].ratio, Some(0.25));
        assert_eq!(rep.failures().len(), 1);
        assert!(!rep.all_pass());
    }

    #[test]
    fn csv_layout() {
        let csv = sample().to_csv().unwrap();
        let line = csv.lines().nth(1).unwrap();
        assert!(line.starts_with("run,theorem1,bilinear-null,\"lambda=1,mu=4,R=8\",3,5.000000000000e-1,2.000000000000e0,2.500000000000e-1,,,,,,"));
        assert_eq!(csv.lines().count(), 5);
        let stripped = strip_timestamps(&csv);
        assert!(stripped.lines().next().unwrap().ends_with(",pass"));
    }

    #[test]
    fn json_round_trip() {
        let rep = sample();
        let back = Report::from_json(&rep.to_json().unwrap()).unwrap();
        assert_eq!(back, rep);
        let mut bad: serde_json::Value = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
        bad["schema"] = 99.into();
        assert!(Report::from_json(&bad.to_string()).is_err());
    }

    #[test]
    fn merge_groups_by_experiment() {
        let mut a = sample();
        let b = sample();
        a.merge(b);
        let names: Vec<&str> = a.rows.iter().map(|r| r.experiment.as_str()).collect();
        assert_eq!(names, ["alpha", "alpha", "theorem1", "theorem1", "theorem1", "theorem1", "thickness", "thickness"]);
    }

    #[test]
    fn human_lists_every_row() {
        let text = sample().to_human();
        assert_eq!(text.lines().count(), 5);
        assert!(text.contains("FAIL bound"));
        assert!(text.ends_with("4 rows, 1 failures\n"));
    }

    #[test]
    fn format_parsing() {
        assert_eq!("json".parse::<Format>().unwrap(), Format::Json);
        assert!("xml".parse::<Format>().is_err());
    }
}
