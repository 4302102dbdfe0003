use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    In,
    Out,
    Unknown,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::In => "in",
            Label::Out => "out",
            Label::Unknown => "unknown",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "in" => Ok(Label::In),
            "out" => Ok(Label::Out),
            "unknown" => Ok(Label::Unknown),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// Per-image outcome: every attempt distance and their aggregate.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReport {
    pub image_index: usize,
    pub label: Label,
    pub distances: Vec<f64>,
    pub score: f64,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct CsvError {
    pub line: usize,
    pub message: String,
}

/// Six significant digits in scientific notation.
fn fmt_float(v: f64) -> String {
    format!("{v:.5e}")
}

/// CSV with header `image_index,label,score,d_1,...,d_r`.
pub fn reports_to_csv(reports: &[ScoreReport]) -> String {
    let r = reports.first().map_or(0, |rep| rep.distances.len());
    let mut out = String::from("image_index,label,score");
    for i in 1..=r {
        write!(out, ",d_{i}").unwrap();
    }
    out.push('\n');
    for rep in reports {
        write!(out, "{},{},{}", rep.image_index, rep.label, fmt_float(rep.score)).unwrap();
        for d in &rep.distances {
            write!(out, ",{}", fmt_float(*d)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parses [`reports_to_csv`] output. Errors carry 1-based line numbers.
pub fn parse_reports_csv(text: &str) -> Result<Vec<ScoreReport>, CsvError> {
    let err = |line: usize, message: String| CsvError { line, message };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[..3] != ["image_index", "label", "score"] {
        return Err(err(
            1,
            format!("expected header image_index,label,score,d_1,..., got {header:?}"),
        ));
    }
    for (i, c) in cols[3..].iter().enumerate() {
        if *c != format!("d_{}", i + 1) {
            return Err(err(1, format!("column {} should be d_{}, got {c:?}", i + 4, i + 1)));
        }
    }
    let r = cols.len() - 3;
    let mut reports = Vec::new();
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(err(n, format!("expected {} fields, got {}", cols.len(), fields.len())));
        }
        let float = |s: &str| -> Result<f64, CsvError> {
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(err(n, format!("not a finite number: {s:?}"))),
            }
        };
        let image_index = fields[0]
            .parse()
            .map_err(|_| err(n, format!("bad image index {:?}", fields[0])))?;
        let label = fields[1].parse().map_err(|m| err(n, m))?;
        let score = float(fields[2])?;
        let distances = fields[3..].iter().map(|s| float(s)).collect::<Result<Vec<_>, _>>()?;
        debug_assert_eq!(distances.len(), r);
        reports.push(ScoreReport {
            image_index,
            label,
            distances,
            score,
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rep(i: usize, label: Label, d: Vec<f64>) -> ScoreReport {
        ScoreReport {
            image_index: i,
            label,
            score: super::super::median(&d),
            distances: d,
        }
    }

    #[test]
    fn csv_layout() {
        let csv = reports_to_csv(&[rep(0, Label::In, vec![0.25]), rep(1, Label::Out, vec![1234.5678])]);
        assert_eq!(
            csv,
            "image_index,label,score,d_1\n0,in,2.50000e-1,2.50000e-1\n1,out,1.23457e3,1.23457e3\n"
        );
    }

    #[test]
    fn round_trip_at_printed_precision() {
        let reports = vec![
            rep(0, Label::Unknown, vec![0.1, 0.3, 0.2]),
            rep(1, Label::In, vec![1e-7, 2.0, 3.0]),
        ];
        let csv = reports_to_csv(&reports);
        let back = parse_reports_csv(&csv).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(reports_to_csv(&back), csv);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let e = parse_reports_csv("image_index,label,score,d_1\n0,in,0.1,0.1\n1,in,abc,0.2\n").unwrap_err();
        assert_eq!(e.line, 3);
        let e = parse_reports_csv("image_index,label,score,d_1\n0,sideways,0.1,0.1\n").unwrap_err();
        assert_eq!(e.line, 2);
        let e = parse_reports_csv("index,score\n").unwrap_err();
        assert_eq!(e.line, 1);
        let e = parse_reports_csv("image_index,label,score,d_1\n0,in,0.1\n").unwrap_err();
        assert_eq!(e.line, 2);
    }
}
