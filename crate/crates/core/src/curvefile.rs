//! CSV curve files with `#` metadata headers.
//!
//! ```text
//! # tool: ionyield 0.1.0
//! # kind: probability
//! # units: W/cm^2,1
//! I,P
//! 1.0000000000000000e12,5.9245793421017611e-8
//! ```
//!
//! Numbers are written with 17 significant digits, so a rendered file parses
//! back to the same values.

use crate::beam::IntensityGrid;
use crate::error::{Error, Result};
use crate::focalavg::{AverageMode, YieldCurve};
use crate::ionmodel::ProbabilityCurve;
use std::fmt::Write as _;
use std::path::Path;

pub const TOOL: &str = concat!("ionyield ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq)]
pub struct CurveFile {
    /// `# key: value` lines in file order, excluding `units`.
    pub metadata: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub units: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

fn clean(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

impl CurveFile {
    pub fn new(columns: &[&str], units: &[&str]) -> Self {
        CurveFile {
            metadata: vec![("tool".into(), TOOL.into())],
            columns: columns.iter().map(|s| s.to_string()).collect(),
            units: units.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.metadata.push((key.to_string(), value.into()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "# {}: {}", clean(k), clean(v));
        }
        let _ = writeln!(out, "# units: {}", self.units.join(","));
        let _ = writeln!(out, "{}", self.columns.join(","));
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::InvalidInput(format!("curve file line {line}: {msg}"));
        let mut metadata = Vec::new();
        let mut units = Vec::new();
        let mut columns: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let n = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if columns.is_some() {
                    return Err(bad(n, "metadata after the column header".into()));
                }
                let rest = rest.trim();
                let (k, v) = rest.split_once(':').ok_or_else(|| bad(n, format!("expected `# key: value`, got `{line}`")))?;
                let (k, v) = (k.trim(), v.trim());
                if k == "units" {
                    units = v.split(',').map(|s| s.trim().to_string()).collect();
                } else {
                    metadata.push((k.to_string(), v.to_string()));
                }
                continue;
            }
            match &columns {
                None => {
                    let cols: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
                    if cols.iter().any(|c| c.is_empty()) {
                        return Err(bad(n, "empty column name".into()));
                    }
                    columns = Some(cols);
                }
                Some(cols) => {
                    let row: std::result::Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
                    let row = row.map_err(|_| bad(n, format!("non-numeric row `{line}`")))?;
                    if row.len() != cols.len() {
                        return Err(bad(n, format!("{} values for {} columns", row.len(), cols.len())));
                    }
                    rows.push(row);
                }
            }
        }
        let columns = columns.ok_or_else(|| Error::InvalidInput("curve file has no column header".into()))?;
        if !units.is_empty() && units.len() != columns.len() {
            return Err(Error::InvalidInput(format!("{} units for {} columns", units.len(), columns.len())));
        }
        Ok(CurveFile { metadata, columns, units, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        CurveFile::parse(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
    }

    fn require(&self, name: &str) -> Result<Vec<f64>> {
        self.column(name).ok_or_else(|| Error::InvalidInput(format!("curve file lacks column `{name}`")))
    }

    pub fn from_probability(p: &ProbabilityCurve) -> Self {
        let mut f = CurveFile::new(&["I", "P"], &["W/cm^2", "1"]).meta("kind", "probability").meta("model", p.provenance.clone());
        f.rows = p.grid.values().iter().zip(&p.p).map(|(i, v)| vec![*i, *v]).collect();
        f
    }

    pub fn to_probability(&self) -> Result<ProbabilityCurve> {
        let grid = IntensityGrid::from_values(self.require("I")?)?;
        ProbabilityCurve::new(grid, self.require("P")?, self.get("model").unwrap_or("file"))
    }

    pub fn from_yield(y: &YieldCurve) -> Self {
        let mut f = CurveFile::new(&["I0", "S", "truncation_bound"], &["W/cm^2", "um^3", "um^3"]).meta("kind", "yield");
        f.metadata.push(("mode".into(), y.mode.as_str().into()));
        for (k, v) in &y.metadata {
            if k != "mode" {
                f.metadata.push((k.clone(), v.clone()));
            }
        }
        f.rows = (0..y.s.len()).map(|j| vec![y.grid.values()[j], y.s[j], y.truncation_bound[j]]).collect();
        f
    }

    pub fn to_yield(&self) -> Result<YieldCurve> {
        let grid = IntensityGrid::from_values(self.require("I0")?)?;
        let s = self.require("S")?;
        let mode = match self.get("mode") {
            Some(m) => AverageMode::parse(m).ok_or_else(|| Error::InvalidInput(format!("unknown averaging mode `{m}`")))?,
            None => return Err(Error::InvalidInput("yield file does not record its averaging mode".into())),
        };
        let truncation_bound = self.column("truncation_bound").unwrap_or_else(|| vec![0.0; s.len()]);
        let metadata = self.metadata.iter().filter(|(k, _)| k != "tool" && k != "kind").cloned().collect();
        Ok(YieldCurve { grid, s, mode, truncation_bound, metadata })
    }
}
