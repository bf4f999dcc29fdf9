use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::EvalError;
use crate::io::write_atomic;

pub const CSV_HEADER: &str = "length,metric_name,value,n_trials,factors_provenance";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EvalEntry {
    Recall {
        length: usize,
        recall_rate: f64,
        n_trials: usize,
    },
    Ppl {
        length: usize,
        ppl: f64,
    },
}

impl EvalEntry {
    pub fn length(&self) -> usize {
        match self {
            Self::Recall { length, .. } | Self::Ppl { length, .. } => *length,
        }
    }

    fn metric(&self) -> (&'static str, f64, Option<usize>) {
        match self {
            Self::Recall {
                recall_rate,
                n_trials,
                ..
            } => ("recall_rate", *recall_rate, Some(*n_trials)),
            Self::Ppl { ppl, .. } => ("ppl", *ppl, None),
        }
    }

    fn validate(&self) -> Result<(), EvalError> {
        match self {
            Self::Ppl { ppl, .. } if !(*ppl >= 1.0) => {
                Err(EvalError::Format(format!("perplexity {ppl} is below 1")))
            }
            Self::Recall { recall_rate, .. } if !(0.0..=1.0).contains(recall_rate) => Err(
                EvalError::Format(format!("recall rate {recall_rate} outside [0, 1]")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub entries: Vec<EvalEntry>,
    pub factors_provenance: String,
    pub model_fingerprint: String,
    pub seed: u64,
    /// Effective run configuration, echoed for provenance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    /// `.csv` selects CSV; anything else is JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Self::Csv,
            _ => Self::Json,
        }
    }
}

impl EvalReport {
    pub fn validate(&self) -> Result<(), EvalError> {
        self.entries.iter().try_for_each(EvalEntry::validate)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let report: Self =
            serde_json::from_str(text).map_err(|e| EvalError::Format(e.to_string()))?;
        report.validate()?;
        Ok(report)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for e in &self.entries {
            let (name, value, trials) = e.metric();
            let trials = trials.map(|t| t.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e.length(),
                name,
                value,
                trials,
                csv_field(&self.factors_provenance)
            );
        }
        out
    }

    /// Parses the rows of a CSV report back into entries. Report-level
    /// fields other than the provenance are not part of the CSV form.
    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let bad = |line: usize, msg: &str| EvalError::Format(format!("csv line {line}: {msg}"));
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(bad(1, "missing header"));
        }
        let mut report = Self::default();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let lineno = i + 2;
            let cols: Vec<&str> = line.splitn(5, ',').collect();
            if cols.len() != 5 {
                return Err(bad(lineno, "expected 5 columns"));
            }
            let length = cols[0].parse().map_err(|_| bad(lineno, "length"))?;
            let value: f64 = cols[2].parse().map_err(|_| bad(lineno, "value"))?;
            let entry = match cols[1] {
                "ppl" => EvalEntry::Ppl { length, ppl: value },
                "recall_rate" => EvalEntry::Recall {
                    length,
                    recall_rate: value,
                    n_trials: cols[3].parse().map_err(|_| bad(lineno, "n_trials"))?,
                },
                other => return Err(bad(lineno, &format!("unknown metric {other:?}"))),
            };
            entry.validate()?;
            report.entries.push(entry);
            report.factors_provenance = unquote(cols[4]);
        }
        Ok(report)
    }

    pub fn emit(&self, format: ReportFormat, path: &Path) -> Result<(), EvalError> {
        let text = match format {
            ReportFormat::Json => self.to_json() + "\n",
            ReportFormat::Csv => self.to_csv(),
        };
        write_atomic(path, text.as_bytes()).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        match ReportFormat::from_path(path) {
            ReportFormat::Json => Self::from_json(&text),
            ReportFormat::Csv => Self::from_csv(&text),
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn unquote(s: &str) -> String {
    match s.strip_prefix('"').and_then(|r| r.strip_suffix('"')) {
        Some(inner) => inner.replace("\"\"", "\""),
        None => s.to_string(),
    }
}
