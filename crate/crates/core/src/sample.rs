//! Observation samples and their text ingestion.

use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where an observation came from in a contaminated draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Inlier,
    Outlier,
}

/// An ordered batch of finite observations, optionally tagged with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSample {
    values: Vec<f64>,
    tags: Option<Vec<Provenance>>,
}

impl ObservationSample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("sample must contain at least one value"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "value at position {} is not finite ({})",
                i + 1,
                values[i]
            )));
        }
        Ok(Self { values, tags: None })
    }

    pub fn with_tags(values: Vec<f64>, tags: Vec<Provenance>) -> Result<Self> {
        if tags.len() != values.len() {
            return Err(Error::invalid(format!(
                "{} tags for {} values",
                tags.len(),
                values.len()
            )));
        }
        let mut s = Self::new(values)?;
        s.tags = Some(tags);
        Ok(s)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tags(&self) -> Option<&[Provenance]> {
        self.tags.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn count(&self, which: Provenance) -> usize {
        self.tags
            .as_ref()
            .map_or(0, |t| t.iter().filter(|&&p| p == which).count())
    }

    /// Parse either a one-column CSV with header `value` or newline-delimited floats.
    ///
    /// Blank lines are skipped; any unparsable or non-finite entry is reported
    /// with its 1-based line number.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut lines = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            lines.push((i as u64 + 1, line?));
        }
        let first = lines.iter().find(|(_, l)| !l.trim().is_empty());
        let csv_header = matches!(first, Some((_, l)) if l.trim().trim_matches('"') == "value");
        let values = if csv_header {
            parse_csv(&lines)?
        } else {
            parse_plain(&lines)?
        };
        if values.is_empty() {
            return Err(Error::Parse {
                line: lines.len() as u64,
                message: "no observations found".into(),
            });
        }
        Self::new(values)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::from_reader(f)
    }
}

impl AsRef<[f64]> for ObservationSample {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

fn parse_value(line: u64, field: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse {:?} as a number", field.trim()),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("non-finite value {v}"),
        });
    }
    Ok(v)
}

fn parse_plain(lines: &[(u64, String)]) -> Result<Vec<f64>> {
    lines
        .iter()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| parse_value(*n, l))
        .collect()
}

fn parse_csv(lines: &[(u64, String)]) -> Result<Vec<f64>> {
    let mut body = String::new();
    for (_, l) in lines {
        body.push_str(l);
        body.push('\n');
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let headers = rdr.headers()?.clone();
    if headers.len() != 1 {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected a single `value` column, found {}", headers.len()),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse {
                line,
                message: e.to_string(),
            }
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected 1 field, found {}", rec.len()),
            });
        }
        if rec[0].is_empty() {
            continue;
        }
        out.push(parse_value(line, &rec[0])?);
    }
    Ok(out)
}
